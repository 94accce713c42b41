"""Sample generators for the induced chain, plus mixing-time measurement.

Both regimes hand the algorithms the same record: one observed transition
(s, per-agent rewards, s') drawn under the fixed policy. The i.i.d. regime
restarts from the stationary distribution every call; the Markovian regime
walks a single trajectory. All draws go through inverse-CDF lookups on
precomputed cumulative tables so a sample costs three uniforms and the
consumption order is part of the determinism contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CapExceeded
from .mdp import JointPolicy, PolicyChain, TabularMdp, joint_policy_matrix

_MIXING_CAP = 10_000_000


@dataclass(slots=True)
class Sample:
    """One observed transition: shared (s, s'), one reward per agent."""

    state: int
    rewards: np.ndarray
    next_state: int


@dataclass(slots=True)
class TrajectoryState:
    """Single-owner cursor for Markovian sampling: current state plus stream.

    Pass it to markov_step and keep only the returned cursor; the rng inside
    is advanced in place, so sharing a cursor between consumers breaks
    reproducibility.
    """

    state: int
    rng: np.random.Generator


def _cdf(weights: np.ndarray, axis: int = -1) -> np.ndarray:
    table = np.cumsum(weights, axis=axis)
    # Pin the last entry to exactly 1 so a uniform in [0, 1) can never fall
    # past the end of the support.
    last = [slice(None)] * table.ndim
    last[axis] = -1
    table[tuple(last)] = 1.0
    return table


class ChainSampler:
    """Precomputed lookup tables for drawing transitions of one induced chain.

    ``reward_noise_std`` adds clipped Gaussian noise to observed rewards
    (default off); clipping back to [0, r_max] keeps the reward contract
    intact. The object is read-only after construction and safe to share
    across runs; streams live in the callers.
    """

    def __init__(
        self,
        mdp: TabularMdp,
        policy: JointPolicy,
        chain: PolicyChain,
        reward_noise_std: float = 0.0,
    ):
        if reward_noise_std < 0.0:
            raise ValueError(f"reward_noise_std must be >= 0, got {reward_noise_std}")
        self.mdp = mdp
        self.policy = policy
        self.chain = chain
        self.reward_noise_std = float(reward_noise_std)
        self.stationary_cdf = _cdf(chain.stationary)
        self.joint_policy_cdf = _cdf(joint_policy_matrix(mdp, policy), axis=1)
        self.next_state_cdf = _cdf(mdp.transition, axis=2)

    @property
    def num_agents(self) -> int:
        return self.mdp.num_agents

    def _observe_rewards(self, state, joint_action, next_state, rng) -> np.ndarray:
        rewards = self.mdp.rewards[:, state, joint_action, next_state].copy()
        if self.reward_noise_std > 0.0:
            rewards += self.reward_noise_std * rng.standard_normal(rewards.shape)
            np.clip(rewards, 0.0, self.mdp.r_max, out=rewards)
        return rewards

    def _draw_transition(self, state: int, rng: np.random.Generator):
        joint_action = int(
            np.searchsorted(self.joint_policy_cdf[state], rng.random(), side="right")
        )
        next_state = int(
            np.searchsorted(
                self.next_state_cdf[state, joint_action], rng.random(), side="right"
            )
        )
        return joint_action, next_state


def iid_sample(sampler: ChainSampler, rng: np.random.Generator) -> Sample:
    """Draw s from the stationary law, then one policy transition out of it.

    Consumes exactly three uniforms (state, joint action, next state), plus
    the noise draws when reward noise is enabled.
    """
    state = int(np.searchsorted(sampler.stationary_cdf, rng.random(), side="right"))
    joint_action, next_state = sampler._draw_transition(state, rng)
    rewards = sampler._observe_rewards(state, joint_action, next_state, rng)
    return Sample(state=state, rewards=rewards, next_state=next_state)


def iid_samples_per_agent(
    sampler: ChainSampler, rng: np.random.Generator
) -> list[Sample]:
    """Variant draw: one shared s, then an independent transition per agent.

    Not the default regime; it exists so the independent-next-state reading
    of the i.i.d. model can be exercised. Agent i should consume element i.
    """
    state = int(np.searchsorted(sampler.stationary_cdf, rng.random(), side="right"))
    out = []
    for _ in range(sampler.num_agents):
        joint_action, next_state = sampler._draw_transition(state, rng)
        rewards = sampler._observe_rewards(state, joint_action, next_state, rng)
        out.append(Sample(state=state, rewards=rewards, next_state=next_state))
    return out


def start_trajectory(
    sampler: ChainSampler,
    rng: np.random.Generator,
    start_state: int | None = None,
) -> TrajectoryState:
    """Open a Markovian cursor, from a stationary draw unless a state is given."""
    if start_state is None:
        start_state = int(
            np.searchsorted(sampler.stationary_cdf, rng.random(), side="right")
        )
    elif not 0 <= start_state < sampler.chain.num_states:
        raise ValueError(f"start_state {start_state} out of range")
    return TrajectoryState(state=int(start_state), rng=rng)


def markov_step(
    sampler: ChainSampler, cursor: TrajectoryState
) -> tuple[Sample, TrajectoryState]:
    """Advance the trajectory one transition and report what was observed.

    The returned cursor continues from the sample's next state, so
    consecutive samples chain: sample t ends where sample t+1 begins.
    """
    joint_action, next_state = sampler._draw_transition(cursor.state, cursor.rng)
    rewards = sampler._observe_rewards(cursor.state, joint_action, next_state, cursor.rng)
    sample = Sample(state=cursor.state, rewards=rewards, next_state=next_state)
    return sample, TrajectoryState(state=next_state, rng=cursor.rng)


@dataclass(frozen=True)
class MixingTimeResult:
    """Mixing time at one threshold plus a log-law fit over several.

    ``tau`` is the smallest t >= 1 with max-over-starts total variation to the
    stationary law at or below the requested threshold. ``rate_constant`` is
    the least-squares slope of tau against ln(1/threshold) through the origin,
    fitted at ``fit_thresholds`` (whose tau values are ``fit_taus``).
    """

    tau: int
    rate_constant: float
    fit_thresholds: tuple[float, ...]
    fit_taus: tuple[int, ...]


def _tv_from_stationary(power: np.ndarray, stationary: np.ndarray) -> float:
    """Worst-case total variation distance, the (1/2) L1 convention."""
    return float(0.5 * np.abs(power - stationary[None, :]).sum(axis=1).max())


def mixing_time(
    transition: np.ndarray,
    stationary: np.ndarray,
    threshold: float = 0.01,
    fit_thresholds: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4),
    cap: int = _MIXING_CAP,
) -> MixingTimeResult:
    """Measure how fast the chain forgets its start.

    Doubles the matrix power until the worst-start TV distance clears each
    threshold, then bisects; worst-start TV to stationarity never increases
    with t, which is what makes the bracket valid. Matrix powers are
    assembled from cached squarings. Raises CapExceeded past ``cap`` steps.
    """
    transition = np.asarray(transition, dtype=np.float64)
    stationary = np.asarray(stationary, dtype=np.float64)
    targets = sorted(set(fit_thresholds) | {threshold}, reverse=True)
    if any(t <= 0 or t >= 1 for t in targets):
        raise ValueError("thresholds must lie strictly between 0 and 1")

    squares = [transition]  # squares[k] == transition ** (2 ** k)

    def power(exponent: int) -> np.ndarray:
        while len(squares) <= exponent.bit_length() - 1:
            squares.append(squares[-1] @ squares[-1])
        result = None
        bit = 0
        while exponent:
            if exponent & 1:
                step = squares[bit]
                result = step if result is None else result @ step
            exponent >>= 1
            bit += 1
        return result

    def tv_at(steps: int) -> float:
        return _tv_from_stationary(power(steps), stationary)

    taus: dict[float, int] = {}
    for level in targets:
        upper = 1
        while tv_at(upper) > level:
            upper *= 2
            if upper > cap:
                raise CapExceeded(
                    f"mixing time search passed {cap} steps at threshold {level}"
                )
        if upper == 1:
            taus[level] = 1
            continue
        # The doubling loop tested upper // 2 and it failed, so the bracket
        # tv(lower) > level >= tv(upper) holds from the start.
        lower = upper // 2
        while lower + 1 < upper:
            mid = (lower + upper) // 2
            if tv_at(mid) <= level:
                upper = mid
            else:
                lower = mid
        taus[level] = upper

    log_terms = np.log(1.0 / np.asarray(targets))
    tau_values = np.array([taus[level] for level in targets], dtype=np.float64)
    rate_constant = float((tau_values @ log_terms) / (log_terms @ log_terms))
    return MixingTimeResult(
        tau=taus[threshold],
        rate_constant=rate_constant,
        fit_thresholds=tuple(targets),
        fit_taus=tuple(int(taus[level]) for level in targets),
    )
