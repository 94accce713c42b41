"""Experiment assembly and execution: bundles, runs, sweeps, artifacts.

A bundle is everything one configuration pins down deterministically: the
environment, its induced chain, features, graph, mixing pair, exact solution,
and diagnostics. Runs draw their randomness from counter-based streams keyed
by (master seed, unit coordinates), so results never depend on scheduling or
worker count. Artifacts follow one layout: per-run CSVs, across-seed
aggregate CSVs, long-format plot data per metric, rendered charts, and a JSON
summary.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .algorithm import (
    ProjectionConfig,
    StepSchedule,
    init_push_sa,
    init_swarm,
    ppdtd_step,
    push_sa_step,
    schedule_value,
)
from .config import ExperimentConfig, parse_config
from .errors import IoFailure, NonFiniteIterate, WeightUnderflow
from .features import FeatureMap, rbf_features
from .mdp import (
    JointPolicy,
    PolicyChain,
    TabularMdp,
    build_cooperative_navigation,
    build_cooperative_navigation_factored,
    induce_chain,
)
from .metrics import (
    MetricsRow,
    RunRecord,
    aggregate_rows,
    config_digest,
    consensus_error,
    optimality_gap,
    td_error_mean_abs,
    write_csv,
)
from .network import (
    Digraph,
    MixingMatrices,
    SpectralProfile,
    build_weights,
    ring_plus_random,
    spectral_profile,
)
from .oracle import (
    ConstantsTable,
    ExactSolution,
    LyapunovWeights,
    constants_table,
    lyapunov_parts,
    lyapunov_weights,
    solve_fixed_point,
)
from .sampling import ChainSampler, iid_sample, markov_step, start_trajectory

PLOT_METRICS = ("consensus_error", "td_error_mean_abs", "optimality_gap")


@dataclass
class ProblemBundle:
    """One configuration, fully instantiated and ready to run."""

    config: ExperimentConfig
    mdp: TabularMdp
    policy: JointPolicy
    chain: PolicyChain
    features: FeatureMap
    graph: Digraph
    mixing: MixingMatrices
    spectral: SpectralProfile
    sampler: ChainSampler
    solution: ExactSolution
    constants: ConstantsTable
    weights: LyapunovWeights
    projection: ProjectionConfig | None


def build_bundle(config: ExperimentConfig) -> ProblemBundle:
    """Construct and cross-validate every deterministic piece of a config."""
    if config.generator == "coop_nav":
        mdp, policy = build_cooperative_navigation(
            num_agents=config.num_agents,
            grid_side=config.grid_side,
            collision_penalty=config.collision_penalty,
            seed=config.env_seed,
            gamma=config.gamma,
            r_max=config.r_max,
        )
    else:
        mdp, policy = build_cooperative_navigation_factored(
            num_agents=config.num_agents,
            grid_side=config.grid_side,
            seed=config.env_seed,
            gamma=config.gamma,
            r_max=config.r_max,
        )
    chain = induce_chain(mdp, policy)
    features = rbf_features(
        num_states=mdp.num_states,
        num_centers=config.num_centers,
        bandwidth=config.bandwidth,
        seed=config.features_seed,
    )
    graph = ring_plus_random(config.num_agents, config.edge_prob, seed=config.graph_seed)
    mixing = build_weights(graph)
    spectral = spectral_profile(mixing)
    sampler = ChainSampler(mdp, policy, chain, reward_noise_std=config.reward_noise_std)
    solution = solve_fixed_point(mdp, policy, chain, features)
    constants = constants_table(
        solution,
        spectral,
        mixing,
        r_max=config.r_max if config.mode == "markov" else None,
        radius=config.projection_radius if config.mode == "markov" else None,
    )
    weights = lyapunov_weights(constants, config.mode)
    projection = None
    if config.mode == "markov":
        projection = ProjectionConfig(enabled=True, radius=config.projection_radius)
    return ProblemBundle(
        config=config,
        mdp=mdp,
        policy=policy,
        chain=chain,
        features=features,
        graph=graph,
        mixing=mixing,
        spectral=spectral,
        sampler=sampler,
        solution=solution,
        constants=constants,
        weights=weights,
        projection=projection,
    )


@dataclass(frozen=True)
class RunUnit:
    """Coordinates of one run inside an experiment.

    (stage, variant_idx, point_idx, seed) key the rng stream together with
    the master seed; stages separate the step sweep from the momentum sweep.
    """

    stage: int
    variant: str
    variant_idx: int
    point_idx: int
    step_scale: float
    beta_scale: float
    seed: int


def _schedule_for(
    variant: str, step_scale: float, beta_scale: float, config: ExperimentConfig
) -> StepSchedule:
    # push-sum baseline has no momentum recursion; its ratio is never used
    ratio = 1.0 if variant == "push_sa" else beta_scale / step_scale
    if variant == "ppdtd_constant":
        return StepSchedule(kind="constant", beta_ratio=ratio, alpha_const=step_scale)
    return StepSchedule(
        kind="decaying",
        beta_ratio=ratio,
        scale=step_scale,
        offset=config.t_offset,
        exponent=config.decay_exponent,
    )


def _variant_beta(variant: str, beta_scale: float) -> float:
    """Momentum scale a variant actually uses; the baseline has none."""
    return 0.0 if variant == "push_sa" else beta_scale


def _stream(config: ExperimentConfig, unit: RunUnit) -> np.random.Generator:
    """Counter-based stream keyed by (master seed, unit coordinates)."""
    entropy = (config.master_seed, unit.stage, unit.variant_idx, unit.point_idx, unit.seed)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def execute_run(bundle: ProblemBundle, unit: RunUnit) -> RunRecord:
    """Run one (variant, point, seed) to the horizon, recording on the grid.

    Recording happens at every iteration up to dense_until, at stride
    multiples beyond that, and always at the final iteration. A non-finite
    iterate or push-sum weight underflow marks the record diverged and keeps
    the rows recorded so far.
    """
    config = bundle.config
    horizon = config.horizon
    schedule = _schedule_for(unit.variant, unit.step_scale, unit.beta_scale, config)
    alpha_arr, beta_arr = schedule_value(schedule, np.arange(horizon))
    alphas = alpha_arr.tolist()
    betas = beta_arr.tolist()
    rng = _stream(config, unit)
    sampler = bundle.sampler
    markovian = config.mode == "markov"
    cursor = None
    if markovian:
        cursor = start_trajectory(sampler, rng, config.start_state)

    digest = config_digest(config.raw)
    rows: list[MetricsRow] = []
    status = "completed"
    diverged_at = None
    dense_until = config.dense_until
    stride = config.stride
    gamma = config.gamma
    mixing = bundle.mixing
    features = bundle.features

    def record(tt: int, alpha: float, beta: float, parameters, corrections, trackers):
        if corrections is None:
            num = parameters.shape[0]
            average = (mixing.pull_weights @ parameters) / num
            dev = parameters - average[None, :]
            error_sq = tracker_sq = 0.0
            consensus_sq = float((dev * dev).sum())
            gap_vec = average - bundle.solution.fixed_point
            gap_sq = float(gap_vec @ gap_vec)
        else:
            error_sq, tracker_sq, consensus_sq, gap_sq = lyapunov_parts(
                parameters, corrections, trackers, bundle.solution, mixing
            )
        total = (
            bundle.weights.error_weight * error_sq
            + bundle.weights.tracker_weight * tracker_sq
            + consensus_sq
            + gap_sq
        )
        rows.append(
            MetricsRow(
                t=tt,
                alpha=alpha,
                beta=beta,
                consensus_error=consensus_error(parameters, mixing.pull_weights),
                td_error_mean_abs=td_error_mean_abs(
                    parameters,
                    features,
                    bundle.solution,
                    bundle.chain,
                    kind=config.td_error_kind,
                ),
                optimality_gap=optimality_gap(
                    parameters, mixing.pull_weights, bundle.solution
                ),
                lyapunov=total,
                V_e=error_sq,
                V_track=tracker_sq,
                V_consensus=consensus_sq,
                V_gap=gap_sq,
            )
        )

    theta0 = np.zeros(bundle.features.dim)
    if unit.variant == "push_sa":
        push_state = init_push_sa(config.num_agents, theta0)
        for t in range(horizon):
            if markovian:
                sample, cursor = markov_step(sampler, cursor)
            else:
                sample = iid_sample(sampler, rng)
            try:
                push_state = push_sa_step(
                    push_state, sample, alphas[t], mixing, features, gamma
                )
            except (NonFiniteIterate, WeightUnderflow) as exc:
                status = "diverged"
                diverged_at = getattr(exc, "iteration", t + 1)
                break
            tt = t + 1
            if tt <= dense_until or tt % stride == 0 or tt == horizon:
                record(tt, alphas[t], 0.0, push_state.parameters, None, None)
    else:
        swarm = init_swarm(config.num_agents, theta0)
        for t in range(horizon):
            if markovian:
                sample, cursor = markov_step(sampler, cursor)
            else:
                sample = iid_sample(sampler, rng)
            try:
                swarm = ppdtd_step(
                    swarm,
                    sample,
                    alphas[t],
                    betas[t],
                    mixing,
                    features,
                    gamma,
                    bundle.projection,
                )
            except NonFiniteIterate as exc:
                status = "diverged"
                diverged_at = exc.iteration
                break
            tt = t + 1
            if tt <= dense_until or tt % stride == 0 or tt == horizon:
                record(
                    tt,
                    alphas[t],
                    betas[t],
                    swarm.parameters,
                    swarm.corrections,
                    swarm.trackers,
                )

    return RunRecord(
        config_digest=digest,
        seed=unit.seed,
        variant=unit.variant,
        step_scale=unit.step_scale,
        beta_scale=unit.beta_scale,
        status=status,
        rows=rows,
        diverged_at=diverged_at,
    )


_WORKER_BUNDLE: ProblemBundle | None = None


def _worker_init(raw_json: str):
    global _WORKER_BUNDLE
    _WORKER_BUNDLE = build_bundle(parse_config(json.loads(raw_json)))


def _worker_run(unit: RunUnit) -> RunRecord:
    return execute_run(_WORKER_BUNDLE, unit)


def _execute_units(
    bundle: ProblemBundle, units: list[RunUnit], workers: int
) -> list[RunRecord]:
    """Run units serially or across processes; result order is unit order."""
    if workers <= 1 or len(units) <= 1:
        return [execute_run(bundle, unit) for unit in units]
    with ProcessPoolExecutor(
        max_workers=workers,
        initializer=_worker_init,
        initargs=(json.dumps(bundle.config.raw),),
    ) as pool:
        return list(pool.map(_worker_run, units))


def _format_scale(value: float) -> str:
    return f"{value:.6g}"


def _unit_filename(record: RunRecord) -> str:
    return (
        f"{record.variant}__a{_format_scale(record.step_scale)}"
        f"__b{_format_scale(record.beta_scale)}__s{record.seed}.csv"
    )


def _point_filename(variant: str, step_scale: float, beta_scale: float) -> str:
    return (
        f"{variant}__a{_format_scale(step_scale)}"
        f"__b{_format_scale(beta_scale)}.csv"
    )


def _ensure_dir(path: str):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create directory ({exc})", path) from exc


def emit_plotdata(
    series: dict[str, dict[str, list[MetricsRow]]], directory: str
) -> list[str]:
    """Write one long-format CSV (iteration, series, value) per metric.

    ``series`` maps metric name -> series label -> aggregate rows. Labels are
    emitted in sorted order so files are reproducible.
    """
    _ensure_dir(directory)
    paths = []
    for metric, by_label in series.items():
        path = os.path.join(directory, f"{metric}.csv")
        try:
            with open(path, "w", encoding="ascii", newline="") as handle:
                handle.write("iteration,series,value\n")
                for label in sorted(by_label):
                    for row in by_label[label]:
                        value = getattr(row, metric)
                        handle.write(f"{row.t},{label},{value:.12e}\n")
        except OSError as exc:
            raise IoFailure(f"cannot write plot data ({exc})", path) from exc
        paths.append(path)
    return paths


def _write_records(
    records: list[RunRecord], out_dir: str
) -> tuple[list[dict], dict[tuple[str, float, float], list[MetricsRow]], list[dict]]:
    """Write per-run and aggregate CSVs; return summaries and aggregates."""
    runs_dir = os.path.join(out_dir, "runs")
    agg_dir = os.path.join(out_dir, "aggregates")
    _ensure_dir(runs_dir)
    _ensure_dir(agg_dir)

    unit_summaries = []
    for record in records:
        path = os.path.join(runs_dir, _unit_filename(record))
        write_csv(path, record.rows)
        unit_summaries.append(
            {
                "variant": record.variant,
                "step_scale": record.step_scale,
                "beta_scale": record.beta_scale,
                "seed": record.seed,
                "status": record.status,
                "diverged_at": record.diverged_at,
                "rows_recorded": len(record.rows),
                "csv": os.path.relpath(path, out_dir),
            }
        )

    by_point: dict[tuple[str, float, float], list[RunRecord]] = {}
    for record in records:
        key = (record.variant, record.step_scale, record.beta_scale)
        by_point.setdefault(key, []).append(record)

    aggregates: dict[tuple[str, float, float], list[MetricsRow]] = {}
    aggregate_summaries = []
    for key in by_point:
        variant, step_scale, beta_scale = key
        point_records = by_point[key]
        if not any(r.status == "completed" for r in point_records):
            continue
        rows = aggregate_rows(point_records)
        aggregates[key] = rows
        path = os.path.join(agg_dir, _point_filename(variant, step_scale, beta_scale))
        write_csv(path, rows)
        aggregate_summaries.append(
            {
                "variant": variant,
                "step_scale": step_scale,
                "beta_scale": beta_scale,
                "csv": os.path.relpath(path, out_dir),
                "final_td_error": rows[-1].td_error_mean_abs,
                "final_consensus_error": rows[-1].consensus_error,
                "final_optimality_gap": rows[-1].optimality_gap,
                "completed_seeds": sum(
                    1 for r in point_records if r.status == "completed"
                ),
            }
        )
    return unit_summaries, aggregates, aggregate_summaries


def _render_outputs(
    best_by_variant: dict[str, list[MetricsRow]],
    out_dir: str,
    svg: bool,
) -> tuple[list[str], list[str]]:
    """Plot data plus rendered charts for the chosen per-variant aggregates."""
    series = {
        metric: {label: rows for label, rows in best_by_variant.items()}
        for metric in PLOT_METRICS
    }
    plot_paths = emit_plotdata(series, os.path.join(out_dir, "plotdata"))
    from .figures import render_charts

    chart_data = {
        metric: {
            label: (
                [row.t for row in rows],
                [getattr(row, metric) for row in rows],
            )
            for label, rows in best_by_variant.items()
        }
        for metric in PLOT_METRICS
    }
    figure_paths = render_charts(chart_data, os.path.join(out_dir, "figures"), svg=svg)
    return plot_paths, figure_paths


def _write_summary(out_dir: str, summary: dict):
    path = os.path.join(out_dir, "run_summary.json")
    try:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write summary ({exc})", path) from exc


def run_experiment(
    config: ExperimentConfig, workers: int = 1, svg: bool = False
) -> dict:
    """The run verb: every configured variant at the configured point.

    Writes per-run CSVs, per-variant aggregates, plot data, charts, and the
    summary. Returns the summary mapping, whose "any_diverged" flag drives
    the process exit status.
    """
    bundle = build_bundle(config)
    units = [
        RunUnit(
            stage=0,
            variant=variant,
            variant_idx=vi,
            point_idx=0,
            step_scale=config.step_scale,
            beta_scale=_variant_beta(variant, config.beta_scale),
            seed=seed,
        )
        for vi, variant in enumerate(config.variants)
        for seed in config.seeds
    ]
    records = _execute_units(bundle, units, workers)
    out_dir = config.output_directory
    _ensure_dir(out_dir)
    unit_summaries, aggregates, aggregate_summaries = _write_records(records, out_dir)
    best_by_variant = {}
    for variant in config.variants:
        key = (variant, config.step_scale, _variant_beta(variant, config.beta_scale))
        if key in aggregates:
            best_by_variant[variant] = aggregates[key]
    plot_paths, figure_paths = _render_outputs(best_by_variant, out_dir, svg)
    summary = {
        "verb": "run",
        "digest": config_digest(config.raw),
        "mode": config.mode,
        "master_seed": config.master_seed,
        "units": unit_summaries,
        "aggregates": aggregate_summaries,
        "any_diverged": any(r.status == "diverged" for r in records),
        "plotdata": [os.path.relpath(p, out_dir) for p in plot_paths],
        "figures": [os.path.relpath(p, out_dir) for p in figure_paths],
        "spectral_warnings": list(bundle.spectral.warnings),
    }
    _write_summary(out_dir, summary)
    return summary


def _sweep_stage(
    bundle: ProblemBundle,
    variant: str,
    variant_idx: int,
    stage: int,
    points: list[tuple[float, float]],
    workers: int,
) -> tuple[list[RunRecord], dict[tuple[str, float, float], list[MetricsRow]]]:
    config = bundle.config
    units = [
        RunUnit(
            stage=stage,
            variant=variant,
            variant_idx=variant_idx,
            point_idx=pi,
            step_scale=a,
            beta_scale=b,
            seed=seed,
        )
        for pi, (a, b) in enumerate(points)
        for seed in config.seeds
    ]
    records = _execute_units(bundle, units, workers)
    by_point: dict[tuple[str, float, float], list[RunRecord]] = {}
    for record in records:
        by_point.setdefault(
            (record.variant, record.step_scale, record.beta_scale), []
        ).append(record)
    aggregates = {}
    for key, point_records in by_point.items():
        if any(r.status == "completed" for r in point_records):
            aggregates[key] = aggregate_rows(point_records)
    return records, aggregates


def _best_point(
    aggregates: dict[tuple[str, float, float], list[MetricsRow]],
    candidates: list[tuple[str, float, float]],
) -> tuple[str, float, float] | None:
    """Candidate with the lowest final aggregate TD error; first on ties."""
    best = None
    best_value = None
    for key in candidates:
        if key not in aggregates:
            continue
        value = aggregates[key][-1].td_error_mean_abs
        if best_value is None or value < best_value:
            best = key
            best_value = value
    return best


def run_sweep(config: ExperimentConfig, workers: int = 1, svg: bool = False) -> dict:
    """The sweep verb: staged grid search per variant.

    Stage one sweeps the step scale with the momentum scale fixed at the
    configured value; stage two (variants with momentum only, and only when a
    momentum grid is configured) sweeps the momentum scale at the best step
    scale. The best point per variant is the lowest final aggregate TD error.
    Requires a sweep section in the config.
    """
    if config.step_grid is None:
        from .errors import ConfigError

        raise ConfigError(["sweep.step_grid: required for the sweep verb"])
    bundle = build_bundle(config)
    out_dir = config.output_directory
    _ensure_dir(out_dir)

    all_records: list[RunRecord] = []
    all_aggregates: dict[tuple[str, float, float], list[MetricsRow]] = {}
    selection = {}
    best_by_variant: dict[str, list[MetricsRow]] = {}

    for vi, variant in enumerate(config.variants):
        stage_beta = _variant_beta(variant, config.beta_scale)
        stage_points = [(a, stage_beta) for a in config.step_grid.values]
        records, aggregates = _sweep_stage(bundle, variant, vi, 0, stage_points, workers)
        all_records.extend(records)
        all_aggregates.update(aggregates)
        candidates = [(variant, a, stage_beta) for a in config.step_grid.values]
        best = _best_point(aggregates, candidates)
        if best is None:
            selection[variant] = {"status": "all_diverged"}
            continue
        best_step = best[1]
        best_beta = best[2]

        uses_momentum = variant != "push_sa"
        if uses_momentum and config.beta_grid is not None:
            # a momentum value already covered by stage one is reused, not
            # re-run: re-running would duplicate the point under a different
            # stream and the written aggregate would mix the two
            stage_points = [
                (best_step, b)
                for b in config.beta_grid.values
                if (variant, best_step, b) not in all_aggregates
            ]
            if stage_points:
                records, aggregates = _sweep_stage(
                    bundle, variant, vi, 1, stage_points, workers
                )
                all_records.extend(records)
                all_aggregates.update(aggregates)
            candidates = [(variant, best_step, b) for b in config.beta_grid.values]
            best_stage2 = _best_point(all_aggregates, candidates)
            if best_stage2 is not None:
                best_beta = best_stage2[2]

        final_key = (variant, best_step, best_beta)
        best_rows = all_aggregates[final_key]
        best_by_variant[variant] = best_rows
        selection[variant] = {
            "status": "ok",
            "best_step_scale": best_step,
            "best_beta_scale": best_beta,
            "final_td_error": best_rows[-1].td_error_mean_abs,
            "final_optimality_gap": best_rows[-1].optimality_gap,
            "final_consensus_error": best_rows[-1].consensus_error,
        }

    unit_summaries, _, aggregate_summaries = _write_records(all_records, out_dir)
    plot_paths, figure_paths = _render_outputs(best_by_variant, out_dir, svg)
    summary = {
        "verb": "sweep",
        "digest": config_digest(config.raw),
        "mode": config.mode,
        "master_seed": config.master_seed,
        "selection": selection,
        "units": unit_summaries,
        "aggregates": aggregate_summaries,
        "any_diverged": any(r.status == "diverged" for r in all_records),
        "plotdata": [os.path.relpath(p, out_dir) for p in plot_paths],
        "figures": [os.path.relpath(p, out_dir) for p in figure_paths],
        "spectral_warnings": list(bundle.spectral.warnings),
    }
    _write_summary(out_dir, summary)
    selection_path = os.path.join(out_dir, "sweep_selection.json")
    try:
        with open(selection_path, "w", encoding="utf-8") as handle:
            json.dump(selection, handle, indent=2, sort_keys=True)
            handle.write("\n")
    except OSError as exc:
        raise IoFailure(f"cannot write selection report ({exc})", selection_path) from exc
    return summary


def oracle_report(config: ExperimentConfig) -> dict:
    """The oracle verb's payload: exact solution plus the constants table."""
    bundle = build_bundle(config)
    report = {
        "digest": config_digest(config.raw),
        "num_states": bundle.mdp.num_states,
        "num_agents": bundle.mdp.num_agents,
        "num_joint_actions": bundle.mdp.num_joint_actions,
        "solution": bundle.solution.to_dict(),
        "constants": bundle.constants.to_dict(),
        "spectral": {
            "pull_deflated_norm": bundle.spectral.pull_deflated_norm,
            "push_deflated_norm": bundle.spectral.push_deflated_norm,
            "pull_contraction_proxy": bundle.spectral.pull_contraction_proxy,
            "push_contraction_proxy": bundle.spectral.push_contraction_proxy,
            "norm_equivalence_proxy": bundle.spectral.norm_equivalence_proxy,
            "warnings": list(bundle.spectral.warnings),
        },
    }
    return report


def validate_config_deep(config: ExperimentConfig) -> tuple[list[str], list[str]]:
    """Runtime validation pass for the validate verb.

    Builds the full bundle and returns (errors, warnings). Errors mean the
    configuration cannot run faithfully; warnings flag degraded diagnostics.
    """
    from .errors import PpdtdError

    try:
        bundle = build_bundle(config)
    except PpdtdError as exc:
        return [f"{type(exc).__name__}: {exc}"], []
    errors = []
    if config.projection_radius is not None:
        needed = 2.0 * float(np.linalg.norm(bundle.solution.fixed_point))
        if config.projection_radius < needed:
            errors.append(
                f"algorithm.projection_radius: {config.projection_radius} is below "
                f"twice the attractor norm {needed:.6g}; the projected runs cannot "
                "settle on the attractor"
            )
    return errors, list(bundle.spectral.warnings)
