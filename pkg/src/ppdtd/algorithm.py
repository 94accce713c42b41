"""Distributed TD(0) recursions: push-pull with variance reduction, push-sum.

The main step couples three stacked iterates, one row per agent: parameters
mixed through the row-stochastic pull matrix, a variance-reduced correction
built from semigradients at the new and previous parameters under the same
sample, and trackers mixed through the column-stochastic push matrix. A step
is a pure function from (state, samples, step sizes) to a new state; nothing
here owns an rng.

The push-sum baseline keeps numerator/weight pairs and de-biases by their
ratio; it shares the semigradient and the sample format so comparisons are
like for like.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteIterate, WeightUnderflow
from .features import FeatureMap
from .network import MixingMatrices
from .sampling import Sample

_WEIGHT_FLOOR = 1e-300


@dataclass(frozen=True)
class StepSchedule:
    """Step-size law with the momentum ratio tied to it.

    kind="constant" uses alpha_const forever; kind="decaying" uses
    scale / (t + offset)^exponent with exponent in (0.5, 1]. In both cases
    the momentum weight is beta_ratio * alpha_t clamped to at most 1.
    """

    kind: str
    beta_ratio: float
    alpha_const: float | None = None
    scale: float | None = None
    offset: float | None = None
    exponent: float | None = None

    def __post_init__(self):
        if self.beta_ratio <= 0.0:
            raise ValueError(f"beta_ratio must be positive, got {self.beta_ratio}")
        if self.kind == "constant":
            if self.alpha_const is None or self.alpha_const <= 0.0:
                raise ValueError("constant schedule needs alpha_const > 0")
            if not (self.scale is None and self.offset is None and self.exponent is None):
                raise ValueError("constant schedule takes no decay parameters")
        elif self.kind == "decaying":
            if self.alpha_const is not None:
                raise ValueError("decaying schedule takes no alpha_const")
            if self.scale is None or self.scale <= 0.0:
                raise ValueError("decaying schedule needs scale > 0")
            if self.offset is None or self.offset < 1.0:
                raise ValueError("decaying schedule needs offset >= 1")
            if self.exponent is None or not 0.5 < self.exponent <= 1.0:
                raise ValueError("decay exponent must lie in (0.5, 1]")
        else:
            raise ValueError(f"unknown schedule kind {self.kind!r}")


def schedule_value(schedule: StepSchedule, t):
    """(alpha_t, beta_t) at iteration t; t may be an integer or an array."""
    t_arr = np.asarray(t, dtype=np.float64)
    if schedule.kind == "constant":
        alpha = np.full_like(t_arr, schedule.alpha_const)
    else:
        alpha = schedule.scale / (t_arr + schedule.offset) ** schedule.exponent
    beta = np.minimum(1.0, schedule.beta_ratio * alpha)
    if np.ndim(t) == 0:
        return float(alpha), float(beta)
    return alpha, beta


@dataclass(frozen=True)
class ProjectionConfig:
    """Row-wise Euclidean ball projection, used by the Markovian regime."""

    enabled: bool = False
    radius: float | None = None

    def __post_init__(self):
        if self.enabled and (self.radius is None or self.radius <= 0.0):
            raise ValueError("enabled projection needs a positive radius")


def _row_norm_upper(row: np.ndarray) -> float:
    # numpy's vectorized add-reduce and its dot-product path can round a norm
    # differently by an ulp; the projection must hold under either reading
    squared = row * row
    return math.sqrt(max(float(np.add.reduce(squared)), float(row @ row)))


def project_ball(values: np.ndarray, radius: float) -> np.ndarray:
    """Clip a vector, or each row of a matrix, into the Euclidean radius ball.

    Returns a new array. Rows near or past the boundary are rescaled and then
    nudged down by single ulps until the recomputed norm is truly <= radius
    under both of numpy's norm reductions, so the invariant survives rounding
    however a caller measures it.
    """
    if radius <= 0.0:
        raise ValueError(f"radius must be positive, got {radius}")
    values = np.array(values, dtype=np.float64)
    single = values.ndim == 1
    rows = values[None, :] if single else values
    norms = np.linalg.norm(rows, axis=1)
    # the two reductions agree to a few ulps, so rows below the band are safe
    for i in np.nonzero(norms > radius * (1.0 - 1e-14))[0]:
        norm = _row_norm_upper(rows[i])
        if norm > radius:
            rows[i] *= radius / norm
            while _row_norm_upper(rows[i]) > radius:
                rows[i] *= 1.0 - 2e-16
    return rows[0] if single else rows


@dataclass(frozen=True)
class SwarmState:
    """Stacked iterates, one row per agent: parameters, corrections, trackers."""

    parameters: np.ndarray
    corrections: np.ndarray
    trackers: np.ndarray
    t: int

    @property
    def num_agents(self) -> int:
        return self.parameters.shape[0]

    @property
    def dim(self) -> int:
        return self.parameters.shape[1]


def init_swarm(num_agents: int, theta0: np.ndarray) -> SwarmState:
    """All agents start at theta0 with zero corrections and zero trackers.

    Zero initialization of both corrections and trackers makes the column-sum
    identity 1^T trackers == 1^T corrections hold from the very first step.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.ndim != 1:
        raise ValueError(f"theta0 must be a vector, got shape {theta0.shape}")
    parameters = np.repeat(theta0[None, :], num_agents, axis=0)
    zeros = np.zeros((num_agents, theta0.shape[0]))
    return SwarmState(
        parameters=parameters, corrections=zeros, trackers=zeros.copy(), t=0
    )


def semigradient(
    features: FeatureMap,
    sample: Sample,
    theta: np.ndarray,
    agent: int,
    gamma: float,
) -> np.ndarray:
    """TD(0) semigradient for one agent at one observed transition.

    phi(s) * (r_i + gamma phi(s')^T theta - phi(s)^T theta); Lipschitz in
    theta with constant (1 + gamma) whenever row norms are at most 1.
    """
    phi_s = features.matrix[sample.state]
    phi_next = features.matrix[sample.next_state]
    residual = sample.rewards[agent] + theta @ (gamma * phi_next - phi_s)
    return residual * phi_s


def _semigradient_rows(
    features: FeatureMap,
    samples: Sample | Sequence[Sample],
    stacked: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Semigradients for all agents, row i at stacked[i], as an (n, d) array."""
    if isinstance(samples, Sample):
        phi_s = features.matrix[samples.state]
        direction = gamma * features.matrix[samples.next_state] - phi_s
        residuals = samples.rewards + stacked @ direction
        return np.outer(residuals, phi_s)
    rows = np.empty_like(stacked)
    for i, sample in enumerate(samples):
        phi_s = features.matrix[sample.state]
        direction = gamma * features.matrix[sample.next_state] - phi_s
        rows[i] = (sample.rewards[i] + stacked[i] @ direction) * phi_s
    return rows


def ppdtd_step(
    state: SwarmState,
    samples: Sample | Sequence[Sample],
    alpha: float,
    beta: float,
    mixing: MixingMatrices,
    features: FeatureMap,
    gamma: float,
    projection: ProjectionConfig | None = None,
) -> SwarmState:
    """One push-pull update with the hybrid variance-reduced correction.

    Parameters take a tracker step and mix through the pull matrix (then
    project row-wise if configured). The same samples are evaluated at both
    the new and the previous parameters; their difference refreshes the
    correction with weight (1 - beta) on the carried part, and trackers mix
    the correction increment through the push matrix. Raises NonFiniteIterate
    at the first step any iterate stops being finite.
    """
    # overflow on a diverging run is reported via NonFiniteIterate, not stderr
    with np.errstate(over="ignore", invalid="ignore"):
        new_parameters = mixing.pull @ (state.parameters + alpha * state.trackers)
        if projection is not None and projection.enabled:
            new_parameters = project_ball(new_parameters, projection.radius)
        grads_new = _semigradient_rows(features, samples, new_parameters, gamma)
        grads_prev = _semigradient_rows(features, samples, state.parameters, gamma)
        new_corrections = (1.0 - beta) * (state.corrections - grads_prev) + grads_new
        new_trackers = mixing.push @ (
            state.trackers + new_corrections - state.corrections
        )
    if not (
        np.isfinite(new_parameters).all()
        and np.isfinite(new_corrections).all()
        and np.isfinite(new_trackers).all()
    ):
        raise NonFiniteIterate(
            f"non-finite iterate at step {state.t + 1}", iteration=state.t + 1
        )
    return SwarmState(
        parameters=new_parameters,
        corrections=new_corrections,
        trackers=new_trackers,
        t=state.t + 1,
    )


@dataclass(frozen=True)
class PushSaState:
    """Push-sum iterates: stacked numerators plus the de-biasing weights."""

    numerators: np.ndarray
    weights: np.ndarray
    t: int

    @property
    def parameters(self) -> np.ndarray:
        """De-biased per-agent parameters, numerators / weights."""
        return self.numerators / self.weights[:, None]

    @property
    def num_agents(self) -> int:
        return self.numerators.shape[0]


def init_push_sa(num_agents: int, theta0: np.ndarray) -> PushSaState:
    """All numerators start at theta0, all push-sum weights at 1."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.ndim != 1:
        raise ValueError(f"theta0 must be a vector, got shape {theta0.shape}")
    return PushSaState(
        numerators=np.repeat(theta0[None, :], num_agents, axis=0),
        weights=np.ones(num_agents),
        t=0,
    )


def push_sa_step(
    state: PushSaState,
    samples: Sample | Sequence[Sample],
    alpha: float,
    mixing: MixingMatrices,
    features: FeatureMap,
    gamma: float,
) -> PushSaState:
    """One push-sum TD(0) update.

    Numerators and weights both mix through the push matrix, parameters are
    de-biased as the ratio, and each agent then applies a plain TD(0) step to
    its mixed numerator at the de-biased point. With a single agent this
    reduces exactly to centralized TD(0); with a doubly stochastic push
    matrix the weights stay identically 1.
    """
    mixed_numerators = mixing.push @ state.numerators
    new_weights = mixing.push @ state.weights
    if new_weights.min() < _WEIGHT_FLOOR:
        raise WeightUnderflow(
            f"push-sum weight fell below {_WEIGHT_FLOOR} at step {state.t + 1}"
        )
    # overflow on a diverging run is reported via NonFiniteIterate, not stderr
    with np.errstate(over="ignore", invalid="ignore"):
        debiased = mixed_numerators / new_weights[:, None]
        grads = _semigradient_rows(features, samples, debiased, gamma)
        new_numerators = mixed_numerators + alpha * grads
    if not (np.isfinite(new_numerators).all() and np.isfinite(new_weights).all()):
        raise NonFiniteIterate(
            f"non-finite iterate at step {state.t + 1}", iteration=state.t + 1
        )
    return PushSaState(numerators=new_numerators, weights=new_weights, t=state.t + 1)
