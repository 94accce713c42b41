"""Exact quantities for the linear TD(0) problem, plus theory diagnostics.

Everything the simulator estimates stochastically has a closed form on a
finite chain: the expected semigradient is affine in the parameters, its
drift matrix and offsets are small dense arrays, and the attractor is the
solution of one linear system. Tests and metrics anchor on these. The
constants table reproduces the convergence-theory coefficient matrix and the
derived step-size quantities; it is a diagnostic surface, computed from
labeled spectral proxies, and nothing gates on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionViolated, SingularSystem
from .features import FeatureMap
from .mdp import JointPolicy, PolicyChain, TabularMdp, joint_policy_matrix
from .network import MixingMatrices, SpectralProfile

_RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class ExactSolution:
    """Closed-form description of the expected TD(0) dynamics.

    The expected semigradient of agent i at parameters theta is
    ``agent_offsets[i] + drift @ theta``; the across-agent mean offset is
    ``mean_offset`` and the attractor ``fixed_point`` solves
    drift @ theta + mean_offset = 0. ``gram_floor`` is the smallest
    eigenvalue of the stationary-weighted feature Gram matrix,
    ``noise_second_moment`` the summed second moment of per-agent sampled
    semigradients at the fixed point, and ``drift_symmetric_max_eig`` the
    largest eigenvalue of drift + drift^T (negative, validated).
    """

    fixed_point: np.ndarray
    drift: np.ndarray
    agent_offsets: np.ndarray
    mean_offset: np.ndarray
    gram_floor: float
    noise_second_moment: float
    drift_symmetric_max_eig: float
    gamma: float

    def __post_init__(self):
        for name in ("fixed_point", "drift", "agent_offsets", "mean_offset"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.fixed_point.shape[0]

    @property
    def num_agents(self) -> int:
        return self.agent_offsets.shape[0]

    def to_dict(self) -> dict:
        return {
            "fixed_point": self.fixed_point.tolist(),
            "drift": self.drift.tolist(),
            "agent_offsets": self.agent_offsets.tolist(),
            "mean_offset": self.mean_offset.tolist(),
            "gram_floor": self.gram_floor,
            "noise_second_moment": self.noise_second_moment,
            "drift_symmetric_max_eig": self.drift_symmetric_max_eig,
            "gamma": self.gamma,
        }


def solve_fixed_point(
    mdp: TabularMdp,
    policy: JointPolicy,
    chain: PolicyChain,
    features: FeatureMap,
) -> ExactSolution:
    """Assemble the exact drift/offsets and solve for the attractor.

    The linear solve gets one iterative-refinement pass and the residual must
    land at or below 1e-10 in the max norm; the noise second moment is an
    exact enumeration over all (s, joint action, s') outcomes weighted by
    stationary law, policy, and kernel. Raises SingularSystem when the drift
    is singular or too ill-conditioned to refine, PreconditionViolated when
    drift + drift^T is not negative definite.
    """
    phi = features.matrix
    gamma = mdp.gamma
    stationary = chain.stationary
    weighted = stationary[:, None] * phi
    drift = phi.T @ (stationary[:, None] * (gamma * chain.transition @ phi - phi))
    agent_offsets = chain.agent_rewards @ weighted
    mean_offset = agent_offsets.mean(axis=0)

    sym_max = float(np.linalg.eigvalsh(drift + drift.T)[-1])
    if sym_max >= 0.0:
        raise PreconditionViolated(
            f"drift + drift^T has max eigenvalue {sym_max:.3e}; "
            "expected semigradient field is not a contraction"
        )

    try:
        fixed_point = np.linalg.solve(drift, -mean_offset)
        refinement = np.linalg.solve(drift, -mean_offset - drift @ fixed_point)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"drift matrix is singular: {exc}") from exc
    fixed_point = fixed_point + refinement
    residual = float(np.max(np.abs(drift @ fixed_point + mean_offset)))
    if residual > _RESIDUAL_TOL:
        raise SingularSystem(
            f"fixed-point residual {residual:.3e} exceeds {_RESIDUAL_TOL} after refinement"
        )

    gram = phi.T @ weighted
    gram_floor = float(np.linalg.eigvalsh(gram)[0])

    joint = joint_policy_matrix(mdp, policy)
    values = phi @ fixed_point
    event_weight = stationary[:, None, None] * joint[:, :, None] * mdp.transition
    deltas = mdp.rewards + gamma * values[None, None, None, :] - values[None, :, None, None]
    row_norm_sq = (phi * phi).sum(axis=1)
    noise = float(
        np.einsum("sat,sat,s->", event_weight, (deltas * deltas).sum(axis=0), row_norm_sq)
    )

    return ExactSolution(
        fixed_point=fixed_point,
        drift=drift,
        agent_offsets=agent_offsets,
        mean_offset=mean_offset,
        gram_floor=gram_floor,
        noise_second_moment=noise,
        drift_symmetric_max_eig=sym_max,
        gamma=gamma,
    )


def expected_semigradient(
    chain: PolicyChain,
    features: FeatureMap,
    gamma: float,
    theta: np.ndarray,
    agent: int,
) -> np.ndarray:
    """Expected semigradient of one agent, from the definitional double sum.

    Sum over s of the stationary weight times phi(s) times the expected
    temporal difference out of s, the latter itself a sum over s'. This is
    deliberately not computed via the drift/offset form so the two can be
    cross-checked against each other.
    """
    phi = features.matrix
    theta = np.asarray(theta, dtype=np.float64)
    expected_next = chain.transition @ (phi @ theta)
    residuals = chain.agent_rewards[agent] + gamma * expected_next - phi @ theta
    return (chain.stationary * residuals) @ phi


@dataclass(frozen=True)
class MarkovConstants:
    """Projected-regime additions to the constants table.

    ``drift_bounds`` are the four regime-specific coefficients,
    ``gradient_bound`` the uniform semigradient norm bound r_max + 2 radius,
    and the three derived step quantities mirror the i.i.d. ones.
    """

    drift_bounds: tuple[float, float, float, float]
    gradient_bound: float
    ratio_floor: float
    beta_ratio: float
    contraction_rate: float
    noise_scale: float
    step_ceiling: float

    def to_dict(self) -> dict:
        return {
            "drift_bounds": list(self.drift_bounds),
            "gradient_bound": self.gradient_bound,
            "ratio_floor": self.ratio_floor,
            "beta_ratio": self.beta_ratio,
            "contraction_rate": self.contraction_rate,
            "noise_scale": self.noise_scale,
            "step_ceiling": self.step_ceiling,
        }


@dataclass(frozen=True)
class ConstantsTable:
    """The 4x4 coefficient matrix and derived step-size diagnostics.

    ``coefficients[i][j]`` weights component j's contribution to component
    i's one-step recursion, indexed (correction error, tracker deviation,
    parameter deviation, attractor gap). ``ratio_floor`` is the minimum
    admissible momentum ratio, ``contraction_rate`` and ``noise_scale`` the
    constants in the convergence envelopes, and ``step_ceiling`` the largest
    admissible constant step. All values inherit the proxy status of the
    spectral inputs, which are echoed alongside.
    """

    coefficients: np.ndarray
    ratio_floor: float
    beta_ratio: float
    contraction_rate: float
    noise_scale: float
    step_ceiling: float
    gamma: float
    num_agents: int
    gram_floor: float
    weight_overlap: float
    pull_contraction: float
    push_contraction: float
    norm_equivalence: float
    pull_distance: float
    noise_second_moment: float
    markov: MarkovConstants | None = None

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.coefficients, dtype=np.float64))
        arr.setflags(write=False)
        object.__setattr__(self, "coefficients", arr)

    def to_dict(self) -> dict:
        out = {
            "coefficients": self.coefficients.tolist(),
            "ratio_floor": self.ratio_floor,
            "beta_ratio": self.beta_ratio,
            "contraction_rate": self.contraction_rate,
            "noise_scale": self.noise_scale,
            "step_ceiling": self.step_ceiling,
            "gamma": self.gamma,
            "num_agents": self.num_agents,
            "gram_floor": self.gram_floor,
            "weight_overlap": self.weight_overlap,
            "pull_contraction": self.pull_contraction,
            "push_contraction": self.push_contraction,
            "norm_equivalence": self.norm_equivalence,
            "pull_distance": self.pull_distance,
            "noise_second_moment": self.noise_second_moment,
            "markov": self.markov.to_dict() if self.markov is not None else None,
        }
        return out


def constants_table(
    solution: ExactSolution,
    spectral: SpectralProfile,
    mixing: MixingMatrices,
    beta_ratio: float | None = None,
    r_max: float | None = None,
    radius: float | None = None,
) -> ConstantsTable:
    """Evaluate the theory's coefficient matrix on one problem instance.

    ``beta_ratio`` defaults to the derived floor, the smallest ratio the
    guarantees admit; passing one below the floor raises
    PreconditionViolated. Supplying ``radius`` (with ``r_max``) additionally
    fills the projected-regime block at its own floor and checks. A pull
    matrix equal to the identity leaves no mixing to analyze and also raises.
    """
    gamma = solution.gamma
    num = mixing.num_nodes
    gram_floor = solution.gram_floor
    overlap = mixing.weight_overlap
    contraction_pull = spectral.pull_contraction_proxy
    contraction_push = spectral.push_contraction_proxy
    equivalence = spectral.norm_equivalence_proxy
    distance = float(np.linalg.norm(mixing.pull - np.eye(num)))
    noise = solution.noise_second_moment
    if gram_floor <= 0.0:
        raise PreconditionViolated("feature Gram floor must be positive")
    if distance == 0.0:
        raise PreconditionViolated(
            "pull matrix equals the identity; the mixing analysis degenerates"
        )

    one_plus = 1.0 + gamma
    eq2 = equivalence * equivalence
    eq4 = eq2 * eq2

    c31 = 3.0 * eq2 / contraction_push
    c41 = 6.0 / ((1.0 - gamma) * gram_floor * overlap) * (overlap / num) ** 2
    c12 = 16.0 * one_plus**2 * eq2
    c22 = 24.0 * eq4 / contraction_push * one_plus**2
    c32 = 3.0 * eq4 / contraction_push
    c42 = 6.0 * num * eq2 / ((1.0 - gamma) * gram_floor * overlap)
    c13 = 4.0 * one_plus**2 * (1.0 + 8.0 * distance**2) * eq2
    c23 = 48.0 * eq4 / contraction_push * distance**2 * one_plus**2
    c33 = 2.0 * eq4 / contraction_pull * one_plus**2
    c43 = 6.0 * eq2 / ((1.0 - gamma) * gram_floor * overlap) * (overlap / num) ** 2
    c24 = 48.0 * eq2 / contraction_push * one_plus**4 * num
    c34 = 2.0 * eq2 / contraction_pull * one_plus**2
    c44 = (1.0 - gamma) * gram_floor * overlap / (2.0 * num)

    ratio_floor = 16.0 * c41 * c13 / contraction_pull
    ratio = ratio_floor if beta_ratio is None else float(beta_ratio)
    if ratio < ratio_floor:
        raise PreconditionViolated(
            f"momentum ratio {ratio} is below the admissible floor {ratio_floor:.6g}"
        )

    c11 = eq2 + 16.0 * one_plus**2
    c21 = 3.0 * eq2 / contraction_push * (ratio**2 + 8.0)
    c14 = 4.0 * one_plus**2 * num * (3.0 * ratio + 8.0 * one_plus**2 * num)

    contraction_rate = min(c44 / 2.0, ratio)
    noise_scale = (
        3.0 * contraction_pull / (4.0 * c13) + 9.0 * eq2 / (8.0 * c23)
    ) * noise * ratio**2
    step_ceiling = min(
        ratio * c23 * contraction_push
        / (2.0 * c11 * c23 * contraction_push + 2.0 * c21 * c13 * contraction_push + 16.0 * c31 * c13 * c23),
        4.0 * c44 * c13 / (contraction_pull * (c14 + c24) + 8.0 * c23 * c34),
        contraction_pull / (4.0 * (c33 + c43)),
        contraction_push * contraction_pull
        / (2.0 * (c22 * contraction_pull + (c12 / c13) * c23 * contraction_pull
                  + 8.0 * c32 * c23 + 8.0 * c42 * c23)),
        min(contraction_push / 2.0, contraction_pull / 2.0) / min(c44 / 2.0, ratio),
        distance / (math.sqrt(2.0) * one_plus),
        (1.0 - gamma) * num / (4.0 * overlap),
        1.0 / (2.0 * ratio),
    )

    markov = None
    if radius is not None:
        if r_max is None:
            raise ValueError("projected-regime constants need r_max alongside radius")
        if radius <= 0.0:
            raise ValueError(f"radius must be positive, got {radius}")
        gradient_bound = r_max + 2.0 * radius
        cp1 = 7.0 + 32.0 * (1.0 + gamma * gamma)
        cp2 = (32.0 * (1.0 + gamma * gamma) + 6.0) * eq2
        cp3 = (32.0 * one_plus**2 + 2.0) * distance**2 * eq2
        cp4 = (
            32.0 * one_plus**2 * gradient_bound**2
            + 14.0 * num * gradient_bound**2
            + (radius + 1.0) ** 2
        )
        floor_m = 32.0 * c41 * cp3 / contraction_pull
        ratio_m = floor_m if beta_ratio is None else float(beta_ratio)
        if ratio_m < floor_m:
            raise PreconditionViolated(
                f"momentum ratio {ratio_m} is below the projected-regime floor {floor_m:.6g}"
            )
        c21_m = 3.0 * eq2 / contraction_push * (ratio_m**2 + 8.0)
        contraction_m = min(c44 / 2.0, ratio_m / 2.0)
        noise_m = (
            contraction_pull * cp4 / (8.0 * cp3)
            + 9.0 * eq2 / (8.0 * c23) * noise * ratio_m**2
        )
        ceiling_m = min(
            ratio_m * c23 * contraction_push
            / (4.0 * cp1 * c23 * contraction_push + 4.0 * c21_m * cp3 * contraction_push
               + 32.0 * c31 * cp3 * c23),
            4.0 * c44 * cp3 / (contraction_pull * c24 + 8.0 * c23 * c34),
            contraction_pull / (4.0 * (c33 + c43)),
            contraction_push * contraction_pull * cp3
            / (2.0 * (cp3 * c22 * contraction_pull + cp2 * c23 * contraction_pull
                      + 8.0 * c32 * c23 * cp3 + 8.0 * c42 * c23 * cp3)),
            min(contraction_push, contraction_pull) / min(c44, ratio_m),
            distance / (math.sqrt(2.0) * one_plus),
            (1.0 - gamma) / 4.0,
            1.0 / (2.0 * ratio_m),
        )
        markov = MarkovConstants(
            drift_bounds=(cp1, cp2, cp3, cp4),
            gradient_bound=gradient_bound,
            ratio_floor=floor_m,
            beta_ratio=ratio_m,
            contraction_rate=contraction_m,
            noise_scale=noise_m,
            step_ceiling=ceiling_m,
        )

    coefficients = np.array(
        [
            [c11, c12, c13, c14],
            [c21, c22, c23, c24],
            [c31, c32, c33, c34],
            [c41, c42, c43, c44],
        ]
    )
    return ConstantsTable(
        coefficients=coefficients,
        ratio_floor=ratio_floor,
        beta_ratio=ratio,
        contraction_rate=contraction_rate,
        noise_scale=noise_scale,
        step_ceiling=step_ceiling,
        gamma=gamma,
        num_agents=num,
        gram_floor=gram_floor,
        weight_overlap=overlap,
        pull_contraction=contraction_pull,
        push_contraction=contraction_push,
        norm_equivalence=equivalence,
        pull_distance=distance,
        noise_second_moment=noise,
        markov=markov,
    )


@dataclass(frozen=True)
class LyapunovWeights:
    """Component weights for the composite potential; regime-dependent."""

    error_weight: float
    tracker_weight: float


def lyapunov_weights(table: ConstantsTable, mode: str = "iid") -> LyapunovWeights:
    """Weights for the potential in the chosen sampling regime.

    The correction-error component is scaled by pull contraction over eight
    times the regime's parameter-deviation coefficient; the tracker component
    always uses the i.i.d. tracker coefficient. Parameter deviation and
    attractor gap enter with weight 1.
    """
    c13 = float(table.coefficients[0, 2])
    c23 = float(table.coefficients[1, 2])
    if mode == "markov":
        if table.markov is None:
            raise ValueError("constants table has no projected-regime block")
        c13 = table.markov.drift_bounds[2]
    elif mode != "iid":
        raise ValueError(f"unknown mode {mode!r}")
    return LyapunovWeights(
        error_weight=table.pull_contraction / (8.0 * c13),
        tracker_weight=table.pull_contraction / (8.0 * c23),
    )


@dataclass(frozen=True)
class LyapunovValue:
    """The composite potential and its four squared components."""

    total: float
    error_sq: float
    tracker_sq: float
    consensus_sq: float
    gap_sq: float


def lyapunov_parts(
    parameters: np.ndarray,
    corrections: np.ndarray,
    trackers: np.ndarray,
    solution: ExactSolution,
    mixing: MixingMatrices,
) -> tuple[float, float, float, float]:
    """(error_sq, tracker_sq, consensus_sq, gap_sq) for stacked iterates.

    Error is the Frobenius gap between corrections and the exact expected
    semigradients at the current rows; tracker deviation is measured from the
    push-weighted column average, parameter deviation from the pull-weighted
    row average, and the gap is that average's squared distance to the
    attractor.
    """
    num = parameters.shape[0]
    # squares of huge-but-finite iterates may overflow; record inf silently
    with np.errstate(over="ignore"):
        exact_rows = solution.agent_offsets + parameters @ solution.drift.T
        err = exact_rows - corrections
        error_sq = float((err * err).sum())
        tracker_avg = trackers.sum(axis=0) / num
        tracker_dev = trackers - np.outer(mixing.push_weights, tracker_avg)
        tracker_sq = float((tracker_dev * tracker_dev).sum())
        average = (mixing.pull_weights @ parameters) / num
        parameter_dev = parameters - average[None, :]
        consensus_sq = float((parameter_dev * parameter_dev).sum())
        gap = average - solution.fixed_point
        gap_sq = float(gap @ gap)
    return error_sq, tracker_sq, consensus_sq, gap_sq


def lyapunov(
    swarm,
    solution: ExactSolution,
    mixing: MixingMatrices,
    weights: LyapunovWeights,
) -> LyapunovValue:
    """Composite potential for a swarm state under the given weights."""
    error_sq, tracker_sq, consensus_sq, gap_sq = lyapunov_parts(
        swarm.parameters, swarm.corrections, swarm.trackers, solution, mixing
    )
    total = (
        weights.error_weight * error_sq
        + weights.tracker_weight * tracker_sq
        + consensus_sq
        + gap_sq
    )
    return LyapunovValue(
        total=total,
        error_sq=error_sq,
        tracker_sq=tracker_sq,
        consensus_sq=consensus_sq,
        gap_sq=gap_sq,
    )
