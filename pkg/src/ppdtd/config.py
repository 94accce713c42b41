"""Experiment configuration: one JSON document, strictly validated.

The schema is nested key-value sections; unknown keys anywhere are errors,
and every complaint carries the dotted path of the offending field so the
validate verb can print actionable output. Parsed configs are normalized
into a frozen dataclass; the raw mapping is kept for digesting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import ConfigError, IoFailure

VARIANTS = ("ppdtd_decaying", "ppdtd_constant", "push_sa")
GENERATORS = ("coop_nav", "coop_nav_factored")
MODES = ("iid", "markov")
TD_KINDS = ("value_error", "bellman_residual")


@dataclass(frozen=True)
class GridSpec:
    """Linearly spaced sweep grid, or an explicit list of values."""

    values: tuple[float, ...]

    @property
    def count(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ExperimentConfig:
    generator: str
    num_agents: int
    grid_side: int
    collision_penalty: float
    gamma: float
    r_max: float
    env_seed: int
    num_centers: int
    bandwidth: float
    features_seed: int
    edge_prob: float
    graph_seed: int
    mode: str
    reward_noise_std: float
    start_state: int | None
    variants: tuple[str, ...]
    step_scale: float
    beta_scale: float
    t_offset: float
    decay_exponent: float
    projection_radius: float | None
    horizon: int
    step_grid: GridSpec | None
    beta_grid: GridSpec | None
    seeds: tuple[int, ...]
    master_seed: int
    dense_until: int
    stride: int
    td_error_kind: str
    output_directory: str
    raw: dict


def _expect_keys(section: dict, path: str, allowed: set[str], errors: list[str]):
    for key in section:
        if key not in allowed:
            errors.append(f"{path}.{key}: unknown key")


def _get_number(section, path, key, errors, *, default=None, required=False,
                minimum=None, maximum=None, exclusive_min=None, integer=False):
    if key not in section:
        if required:
            errors.append(f"{path}.{key}: required")
        return default
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{path}.{key}: must be a number, got {value!r}")
        return default
    if integer and not isinstance(value, int):
        errors.append(f"{path}.{key}: must be an integer, got {value!r}")
        return default
    if minimum is not None and value < minimum:
        errors.append(f"{path}.{key}: must be >= {minimum}, got {value}")
        return default
    if exclusive_min is not None and value <= exclusive_min:
        errors.append(f"{path}.{key}: must be > {exclusive_min}, got {value}")
        return default
    if maximum is not None and value > maximum:
        errors.append(f"{path}.{key}: must be <= {maximum}, got {value}")
        return default
    return value


def _get_choice(section, path, key, errors, choices, *, default=None, required=False):
    if key not in section:
        if required:
            errors.append(f"{path}.{key}: required")
        return default
    value = section[key]
    if value not in choices:
        errors.append(f"{path}.{key}: must be one of {list(choices)}, got {value!r}")
        return default
    return value


def _parse_grid(node, path: str, errors: list[str]) -> GridSpec | None:
    if isinstance(node, list):
        if not node or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0
            for v in node
        ):
            errors.append(f"{path}: explicit grid must be a non-empty list of positive numbers")
            return None
        return GridSpec(values=tuple(float(v) for v in node))
    if isinstance(node, dict):
        local: list[str] = []
        _expect_keys(node, path, {"start", "stop", "count"}, local)
        start = _get_number(node, path, "start", local, required=True, exclusive_min=0.0)
        stop = _get_number(node, path, "stop", local, required=True, exclusive_min=0.0)
        count = _get_number(node, path, "count", local, required=True, minimum=2, integer=True)
        if local:
            errors.extend(local)
            return None
        if stop <= start:
            errors.append(f"{path}: stop must exceed start")
            return None
        step = (stop - start) / (count - 1)
        return GridSpec(values=tuple(start + step * k for k in range(count)))
    errors.append(f"{path}: must be a list of values or a start/stop/count mapping")
    return None


def parse_config(document: dict) -> ExperimentConfig:
    """Validate a parsed JSON mapping and normalize it.

    Raises ConfigError carrying one message per problem; a valid document
    yields a fully defaulted ExperimentConfig.
    """
    errors: list[str] = []
    if not isinstance(document, dict):
        raise ConfigError("top level: must be a JSON object")

    _expect_keys(
        document,
        "config",
        {"environment", "features", "graph", "sampling", "algorithm",
         "sweep", "seeds", "master_seed", "metrics", "output"},
        errors,
    )

    def section(name: str, required: bool = True) -> dict:
        node = document.get(name)
        if node is None:
            if required:
                errors.append(f"{name}: required section")
            return {}
        if not isinstance(node, dict):
            errors.append(f"{name}: must be an object")
            return {}
        return node

    env = section("environment")
    _expect_keys(env, "environment",
                 {"generator", "num_agents", "grid_side", "collision_penalty",
                  "gamma", "r_max", "seed"}, errors)
    generator = _get_choice(env, "environment", "generator", errors, GENERATORS, required=True)
    num_agents = _get_number(env, "environment", "num_agents", errors,
                             required=True, minimum=3, integer=True, default=3)
    grid_side = _get_number(env, "environment", "grid_side", errors,
                            required=True, minimum=2, integer=True, default=2)
    collision_penalty = _get_number(env, "environment", "collision_penalty", errors,
                                    default=0.5, minimum=0.0)
    gamma = _get_number(env, "environment", "gamma", errors,
                        default=0.9, exclusive_min=0.0)
    if gamma is not None and gamma >= 1.0:
        errors.append(f"environment.gamma: must be < 1, got {gamma}")
    r_max = _get_number(env, "environment", "r_max", errors, default=1.0, exclusive_min=0.0)
    env_seed = _get_number(env, "environment", "seed", errors, default=0, integer=True)
    if generator == "coop_nav_factored" and "collision_penalty" in env:
        errors.append(
            "environment.collision_penalty: has no effect with the factored generator"
        )

    feat = section("features")
    _expect_keys(feat, "features", {"num_centers", "bandwidth", "seed"}, errors)
    num_centers = _get_number(feat, "features", "num_centers", errors,
                              required=True, minimum=1, integer=True, default=1)
    bandwidth = _get_number(feat, "features", "bandwidth", errors,
                            required=True, exclusive_min=0.0, default=1.0)
    features_seed = _get_number(feat, "features", "seed", errors, default=0, integer=True)

    graph = section("graph")
    _expect_keys(graph, "graph", {"edge_prob", "seed"}, errors)
    edge_prob = _get_number(graph, "graph", "edge_prob", errors,
                            required=True, minimum=0.0, maximum=1.0, default=0.0)
    graph_seed = _get_number(graph, "graph", "seed", errors, default=0, integer=True)

    sampling = section("sampling")
    _expect_keys(sampling, "sampling",
                 {"mode", "reward_noise_std", "start_state"}, errors)
    mode = _get_choice(sampling, "sampling", "mode", errors, MODES, required=True, default="iid")
    reward_noise_std = _get_number(sampling, "sampling", "reward_noise_std", errors,
                                   default=0.0, minimum=0.0)
    start_state = None
    if "start_state" in sampling:
        raw_start = sampling["start_state"]
        if raw_start == "stationary":
            start_state = None
        elif isinstance(raw_start, int) and not isinstance(raw_start, bool) and raw_start >= 0:
            start_state = raw_start
        else:
            errors.append(
                'sampling.start_state: must be "stationary" or a nonnegative state index'
            )
    if mode == "iid" and "start_state" in sampling and sampling["start_state"] != "stationary":
        errors.append("sampling.start_state: only meaningful in markov mode")

    algo = section("algorithm")
    _expect_keys(algo, "algorithm",
                 {"variants", "step_scale", "beta_scale", "t_offset",
                  "decay_exponent", "projection_radius", "horizon"}, errors)
    raw_variants = algo.get("variants")
    variants: tuple[str, ...] = ()
    if raw_variants is None:
        errors.append("algorithm.variants: required")
    elif (not isinstance(raw_variants, list) or not raw_variants
          or any(v not in VARIANTS for v in raw_variants)
          or len(set(raw_variants)) != len(raw_variants)):
        errors.append(
            f"algorithm.variants: must be a non-empty list without repeats from {list(VARIANTS)}"
        )
    else:
        variants = tuple(raw_variants)
    step_scale = _get_number(algo, "algorithm", "step_scale", errors,
                             required=True, exclusive_min=0.0, default=1.0)
    beta_scale = _get_number(algo, "algorithm", "beta_scale", errors,
                             default=1.0, exclusive_min=0.0)
    t_offset = _get_number(algo, "algorithm", "t_offset", errors, default=5.0, minimum=1.0)
    decay_exponent = _get_number(algo, "algorithm", "decay_exponent", errors,
                                 default=1.0, exclusive_min=0.5, maximum=1.0)
    projection_radius = None
    if "projection_radius" in algo and algo["projection_radius"] is not None:
        projection_radius = _get_number(algo, "algorithm", "projection_radius", errors,
                                        exclusive_min=0.0)
    horizon = _get_number(algo, "algorithm", "horizon", errors,
                          required=True, minimum=1, integer=True, default=1)
    if mode == "markov" and projection_radius is None:
        errors.append("algorithm.projection_radius: required in markov mode")
    if mode == "iid" and projection_radius is not None:
        errors.append("algorithm.projection_radius: only used in markov mode")

    sweep = section("sweep", required=False)
    step_grid = beta_grid = None
    if sweep:
        _expect_keys(sweep, "sweep", {"step_grid", "beta_grid"}, errors)
        if "step_grid" in sweep:
            step_grid = _parse_grid(sweep["step_grid"], "sweep.step_grid", errors)
        else:
            errors.append("sweep.step_grid: required when a sweep section is present")
        if "beta_grid" in sweep:
            beta_grid = _parse_grid(sweep["beta_grid"], "sweep.beta_grid", errors)

    raw_seeds = document.get("seeds")
    seeds: tuple[int, ...] = ()
    if raw_seeds is None:
        errors.append("seeds: required")
    elif (not isinstance(raw_seeds, list) or not raw_seeds
          or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in raw_seeds)):
        errors.append("seeds: must be a non-empty list of nonnegative integers")
    else:
        # duplicates are allowed: repeated seeds reproduce identical runs
        seeds = tuple(raw_seeds)

    master_seed = document.get("master_seed", 0)
    if isinstance(master_seed, bool) or not isinstance(master_seed, int) or master_seed < 0:
        errors.append("master_seed: must be a nonnegative integer")
        master_seed = 0

    met = section("metrics", required=False)
    _expect_keys(met, "metrics", {"dense_until", "stride", "td_error_kind"}, errors)
    dense_until = _get_number(met, "metrics", "dense_until", errors,
                              default=10_000, minimum=0, integer=True)
    stride = _get_number(met, "metrics", "stride", errors, default=10, minimum=1, integer=True)
    td_error_kind = _get_choice(met, "metrics", "td_error_kind", errors,
                                TD_KINDS, default="value_error")

    out = section("output", required=False)
    _expect_keys(out, "output", {"directory"}, errors)
    output_directory = out.get("directory", "ppdtd_out")
    if not isinstance(output_directory, str) or not output_directory:
        errors.append("output.directory: must be a non-empty string")
        output_directory = "ppdtd_out"

    if errors:
        raise ConfigError(errors)

    return ExperimentConfig(
        generator=generator,
        num_agents=num_agents,
        grid_side=grid_side,
        collision_penalty=collision_penalty,
        gamma=gamma,
        r_max=r_max,
        env_seed=env_seed,
        num_centers=num_centers,
        bandwidth=bandwidth,
        features_seed=features_seed,
        edge_prob=edge_prob,
        graph_seed=graph_seed,
        mode=mode,
        reward_noise_std=reward_noise_std,
        start_state=start_state,
        variants=variants,
        step_scale=step_scale,
        beta_scale=beta_scale,
        t_offset=t_offset,
        decay_exponent=decay_exponent,
        projection_radius=projection_radius,
        horizon=horizon,
        step_grid=step_grid,
        beta_grid=beta_grid,
        seeds=seeds,
        master_seed=master_seed,
        dense_until=dense_until,
        stride=stride,
        td_error_kind=td_error_kind,
        output_directory=output_directory,
        raw=document,
    )


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            document = json.load(handle)
    except OSError as exc:
        raise IoFailure(f"cannot read config ({exc})", path) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config is not valid JSON: {exc}"]) from exc
    return parse_config(document)
