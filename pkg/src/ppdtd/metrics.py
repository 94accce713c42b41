"""Run metrics and their delimited serialization.

One row per recorded iteration, fixed column order, scientific notation with
12 digits after the point, comma separator, newline line ends. Formatting is
pinned so identical runs produce byte-identical files on any platform.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, fields

import numpy as np

from .errors import IoFailure
from .features import FeatureMap
from .mdp import PolicyChain
from .oracle import ExactSolution

CSV_COLUMNS = (
    "t",
    "alpha",
    "beta",
    "consensus_error",
    "td_error_mean_abs",
    "optimality_gap",
    "lyapunov",
    "V_e",
    "V_track",
    "V_consensus",
    "V_gap",
)

TD_ERROR_KINDS = ("value_error", "bellman_residual")


@dataclass(frozen=True)
class MetricsRow:
    """One recorded iteration; field order matches the CSV column order."""

    t: int
    alpha: float
    beta: float
    consensus_error: float
    td_error_mean_abs: float
    optimality_gap: float
    lyapunov: float
    V_e: float
    V_track: float
    V_consensus: float
    V_gap: float


assert tuple(f.name for f in fields(MetricsRow)) == CSV_COLUMNS


@dataclass
class RunRecord:
    """Everything one run produced: provenance, status, and the recorded rows.

    ``status`` is "completed" or "diverged"; a diverged run keeps the rows
    recorded before the blow-up and notes the offending iteration.
    """

    config_digest: str
    seed: int
    variant: str
    step_scale: float
    beta_scale: float
    status: str
    rows: list[MetricsRow]
    diverged_at: int | None = None


def config_digest(config_mapping: dict) -> str:
    """Stable short digest of a configuration mapping.

    Canonical JSON (sorted keys, tight separators) hashed with sha256,
    truncated to 16 hex characters; enough to key artifacts on.
    """
    canonical = json.dumps(config_mapping, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()[:16]


def consensus_error(parameters: np.ndarray, pull_weights: np.ndarray) -> float:
    """Mean distance of the agent rows from their weighted average.

    The average uses the pull matrix's left Perron weights over n, the
    combination the mixing actually preserves.
    """
    num = parameters.shape[0]
    # squaring huge-but-finite rows may overflow; report inf without noise
    with np.errstate(over="ignore"):
        average = (pull_weights @ parameters) / num
        deviations = parameters - average[None, :]
        return float(np.linalg.norm(deviations, axis=1).mean())


def optimality_gap(
    parameters: np.ndarray, pull_weights: np.ndarray, solution: ExactSolution
) -> float:
    """Euclidean distance from the weighted average row to the attractor."""
    num = parameters.shape[0]
    with np.errstate(over="ignore"):
        average = (pull_weights @ parameters) / num
        return float(np.linalg.norm(average - solution.fixed_point))


def td_error_mean_abs(
    parameters: np.ndarray,
    features: FeatureMap,
    solution: ExactSolution,
    chain: PolicyChain | None = None,
    kind: str = "value_error",
) -> float:
    """Mean absolute TD error across agents and states, two readings.

    "value_error" compares each agent's value estimate to the attractor's,
    averaged over agents and states. "bellman_residual" averages the absolute
    one-step residual under the mean reward and needs the chain. Which one
    the source experiments plotted is ambiguous, so both are first-class.
    """
    with np.errstate(over="ignore"):
        values = features.matrix @ parameters.T  # (S, n)
        if kind == "value_error":
            reference = features.matrix @ solution.fixed_point
            return float(np.abs(values - reference[:, None]).mean())
        if kind == "bellman_residual":
            if chain is None:
                raise ValueError("bellman_residual needs the induced chain")
            residuals = (
                chain.mean_reward[:, None]
                + solution.gamma * (chain.transition @ values)
                - values
            )
            return float(np.abs(residuals).mean())
    raise ValueError(f"unknown td_error kind {kind!r}; use one of {TD_ERROR_KINDS}")


def _format_value(value: float) -> str:
    return f"{value:.12e}"


def write_csv(path: str, rows: list[MetricsRow]):
    """Write rows in the pinned delimited format (header always present)."""
    try:
        with open(path, "w", encoding="ascii", newline="") as handle:
            handle.write(",".join(CSV_COLUMNS) + "\n")
            for row in rows:
                cells = [str(row.t)]
                cells.extend(
                    _format_value(getattr(row, name)) for name in CSV_COLUMNS[1:]
                )
                handle.write(",".join(cells) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write metrics CSV ({exc})", path) from exc


def load_csv(path: str) -> dict[str, np.ndarray]:
    """Read a metrics CSV back into column arrays (t as int64)."""
    try:
        with open(path, "r", encoding="ascii") as handle:
            header = handle.readline().strip()
            if header != ",".join(CSV_COLUMNS):
                raise IoFailure(f"unexpected header {header!r}", path)
            data = [line.strip().split(",") for line in handle if line.strip()]
    except OSError as exc:
        raise IoFailure(f"cannot read metrics CSV ({exc})", path) from exc
    if not data:
        return {name: np.array([]) for name in CSV_COLUMNS}
    columns = np.array(data, dtype=np.float64).T
    out = {name: columns[i] for i, name in enumerate(CSV_COLUMNS)}
    out["t"] = out["t"].astype(np.int64)
    return out


def aggregate_rows(records: list[RunRecord]) -> list[MetricsRow]:
    """Across-seed mean of completed runs, row by recorded row.

    Requires at least one completed record; all completed records of one
    configuration share the same recording grid, which is validated.
    """
    completed = [r for r in records if r.status == "completed"]
    if not completed:
        raise ValueError("no completed runs to aggregate")
    grids = {tuple(row.t for row in r.rows) for r in completed}
    if len(grids) != 1:
        raise ValueError("completed runs disagree on the recording grid")
    stacked = np.array(
        [
            [
                [getattr(row, name) for name in CSV_COLUMNS[1:]]
                for row in record.rows
            ]
            for record in completed
        ]
    )
    means = stacked.mean(axis=0)
    ts = [row.t for row in completed[0].rows]
    return [
        MetricsRow(t=int(t), **dict(zip(CSV_COLUMNS[1:], map(float, mean_row))))
        for t, mean_row in zip(ts, means)
    ]
