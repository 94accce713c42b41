"""Diagnostics and the delimited output format."""

import os

import numpy as np
import pytest

from conftest import make_random_mdp
from ppdtd import (
    ExactSolution,
    FeatureMap,
    IoFailure,
    MetricsRow,
    RunRecord,
    aggregate_rows,
    config_digest,
    consensus_error,
    induce_chain,
    load_csv,
    optimality_gap,
    solve_fixed_point,
    td_error_mean_abs,
    write_csv,
)

ONES3 = np.ones(3)


def tiny_solution(fixed_point, dim=2):
    fixed_point = np.asarray(fixed_point, dtype=np.float64)
    return ExactSolution(
        fixed_point=fixed_point,
        drift=-np.eye(dim),
        agent_offsets=np.tile(fixed_point, (3, 1)),
        mean_offset=fixed_point.copy(),
        gram_floor=1.0,
        noise_second_moment=0.0,
        drift_symmetric_max_eig=-2.0,
        gamma=0.9,
    )


def make_row(t, fill):
    return MetricsRow(
        t=t,
        alpha=fill,
        beta=fill / 2.0,
        consensus_error=fill * 3.0,
        td_error_mean_abs=fill * 5.0,
        optimality_gap=fill * 7.0,
        lyapunov=fill * 11.0,
        V_e=fill * 13.0,
        V_track=fill * 17.0,
        V_consensus=fill * 19.0,
        V_gap=fill * 23.0,
    )


# ------------------------------------------------------------------ measures


def test_consensus_error_zero_on_agreement():
    rows = np.tile(np.array([2.0, -1.0]), (3, 1))
    assert consensus_error(rows, ONES3) == 0.0


def test_consensus_error_hand_value():
    rows = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert consensus_error(rows, np.ones(2)) == pytest.approx(1.0, abs=1e-15)


def test_consensus_error_translation_invariant():
    rng = np.random.default_rng(70)
    rows = rng.normal(size=(3, 2))
    shift = np.array([4.0, -2.5])
    before = consensus_error(rows, ONES3)
    after = consensus_error(rows + shift[None, :], ONES3)
    assert after == pytest.approx(before, rel=1e-12, abs=1e-12)


def test_optimality_gap_at_attractor_and_offset():
    solution = tiny_solution([0.5, -0.25])
    rows = np.tile(solution.fixed_point, (3, 1))
    assert optimality_gap(rows, ONES3, solution) == 0.0
    shifted = rows + np.array([3.0, 4.0])[None, :]
    assert optimality_gap(shifted, ONES3, solution) == pytest.approx(5.0, abs=1e-12)


def test_td_error_zero_at_attractor():
    rng = np.random.default_rng(71)
    mdp, policy = make_random_mdp(rng, 3, (2,))
    chain = induce_chain(mdp, policy)
    features = FeatureMap(matrix=np.eye(3))
    solution = solve_fixed_point(mdp, policy, chain, features)
    rows = np.tile(solution.fixed_point, (4, 1))
    assert td_error_mean_abs(rows, features, solution) <= 1e-14
    residual = td_error_mean_abs(
        rows, features, solution, chain=chain, kind="bellman_residual"
    )
    assert residual <= 1e-10


def test_td_error_tabular_single_agent_is_mean_abs_difference():
    features = FeatureMap(matrix=np.eye(2))
    solution = tiny_solution([1.0, -1.0])
    rows = np.array([[2.0, 0.5]])
    expected = np.abs(np.array([2.0, 0.5]) - np.array([1.0, -1.0])).mean()
    assert td_error_mean_abs(rows, features, solution) == pytest.approx(expected, abs=1e-15)


def test_td_error_kind_validation():
    features = FeatureMap(matrix=np.eye(2))
    solution = tiny_solution([0.0, 0.0])
    rows = np.zeros((2, 2))
    with pytest.raises(ValueError):
        td_error_mean_abs(rows, features, solution, kind="bellman_residual")
    with pytest.raises(ValueError):
        td_error_mean_abs(rows, features, solution, kind="huber")


# ----------------------------------------------------------------- delimited


def test_write_csv_header_only(tmp_path):
    path = str(tmp_path / "empty.csv")
    write_csv(path, [])
    with open(path, encoding="ascii") as handle:
        lines = handle.read().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("t,alpha,beta,consensus_error,")
    loaded = load_csv(path)
    assert loaded["t"].size == 0


def test_csv_round_trip(tmp_path):
    rows = [make_row(1, 0.1), make_row(2, 0.2), make_row(100, 1.0 / 3.0)]
    path = str(tmp_path / "rows.csv")
    write_csv(path, rows)
    with open(path, encoding="ascii") as handle:
        assert len(handle.read().splitlines()) == 4
    loaded = load_csv(path)
    assert loaded["t"].tolist() == [1, 2, 100]
    assert loaded["t"].dtype == np.int64
    for row in rows:
        idx = loaded["t"].tolist().index(row.t)
        for name in ("alpha", "optimality_gap", "V_gap"):
            assert loaded[name][idx] == pytest.approx(getattr(row, name), rel=1e-12)


def test_csv_bytes_reproducible(tmp_path):
    rows = [make_row(t, 0.31 * (t + 1)) for t in range(5)]
    path_a = str(tmp_path / "a.csv")
    path_b = str(tmp_path / "b.csv")
    write_csv(path_a, rows)
    write_csv(path_b, rows)
    with open(path_a, "rb") as fa, open(path_b, "rb") as fb:
        assert fa.read() == fb.read()


def test_csv_io_failures(tmp_path):
    with pytest.raises(IoFailure):
        write_csv(str(tmp_path / "no" / "such" / "dir.csv"), [])
    with pytest.raises(IoFailure):
        load_csv(str(tmp_path / "missing.csv"))
    bad = tmp_path / "bad.csv"
    bad.write_text("wrong,header\n", encoding="ascii")
    with pytest.raises(IoFailure):
        load_csv(str(bad))


# -------------------------------------------------------------------- digest


def test_config_digest_ignores_key_order():
    a = {"outer": {"x": 1, "y": [1, 2]}, "z": "s"}
    b = {"z": "s", "outer": {"y": [1, 2], "x": 1}}
    assert config_digest(a) == config_digest(b)
    assert len(config_digest(a)) == 16
    assert set(config_digest(a)) <= set("0123456789abcdef")


def test_config_digest_sees_value_changes():
    a = {"outer": {"x": 1}}
    b = {"outer": {"x": 2}}
    assert config_digest(a) != config_digest(b)


# ----------------------------------------------------------------- aggregate


def record_with(rows, status="completed", seed=0):
    return RunRecord(
        config_digest="0" * 16,
        seed=seed,
        variant="ppdtd",
        step_scale=1.0,
        beta_scale=0.5,
        status=status,
        rows=rows,
        diverged_at=None if status == "completed" else 3,
    )


def test_aggregate_means_completed_runs_only():
    first = record_with([make_row(1, 0.1), make_row(2, 0.3)], seed=0)
    second = record_with([make_row(1, 0.3), make_row(2, 0.5)], seed=1)
    broken = record_with([make_row(1, 9.9)], status="diverged", seed=2)
    combined = aggregate_rows([first, second, broken])
    assert [row.t for row in combined] == [1, 2]
    assert combined[0].alpha == pytest.approx(0.2, abs=1e-15)
    assert combined[1].optimality_gap == pytest.approx(7.0 * 0.4, rel=1e-12)


def test_aggregate_requires_matching_grids():
    first = record_with([make_row(1, 0.1), make_row(2, 0.3)])
    second = record_with([make_row(1, 0.3)], seed=1)
    with pytest.raises(ValueError):
        aggregate_rows([first, second])
    with pytest.raises(ValueError):
        aggregate_rows([record_with([make_row(1, 0.1)], status="diverged")])
