"""Sampling oracles: stationary draws, trajectories, mixing times."""

import numpy as np
import pytest

from conftest import make_random_mdp, make_two_state_problem
from ppdtd import (
    CapExceeded,
    ChainSampler,
    JointPolicy,
    PolicyChain,
    TabularMdp,
    iid_sample,
    iid_samples_per_agent,
    induce_chain,
    markov_step,
    mixing_time,
    start_trajectory,
)


def unit_rng(*entropy):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=entropy)))


def test_one_state_chain_always_same_sample():
    transition = np.ones((1, 1, 1))
    rewards = np.full((2, 1, 1, 1), 0.4)
    mdp = TabularMdp(transition=transition, rewards=rewards, action_sizes=(1, 1), gamma=0.9)
    policy = JointPolicy(tables=(np.ones((1, 1)), np.ones((1, 1))))
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain)
    rng = unit_rng(0)
    for _ in range(10):
        sample = iid_sample(sampler, rng)
        assert sample.state == 0
        assert sample.next_state == 0
        assert sample.rewards == pytest.approx([0.4, 0.4])


def test_iid_state_frequency_matches_stationary():
    """10^6 draws against the hand-solved d = (5/6, 1/6), tolerance 0.002."""
    mdp, policy = make_two_state_problem()
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain)
    rng = unit_rng(1)
    draws = 1_000_000
    count_zero = 0
    for _ in range(draws):
        if iid_sample(sampler, rng).state == 0:
            count_zero += 1
    assert abs(count_zero / draws - 5.0 / 6.0) <= 0.002


def test_trajectory_occupancy_matches_stationary():
    mdp, policy = make_two_state_problem()
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain)
    rng = unit_rng(2)
    cursor = start_trajectory(sampler, rng)
    steps = 1_000_000
    count_zero = 0
    for _ in range(steps):
        sample, cursor = markov_step(sampler, cursor)
        if sample.state == 0:
            count_zero += 1
    assert abs(count_zero / steps - 5.0 / 6.0) <= 0.002


def test_deterministic_cycle_trajectory():
    """Kernel s -> s+1 mod 3 walks states in order (built directly, not induced)."""
    transition = np.zeros((3, 1, 3))
    for s in range(3):
        transition[s, 0, (s + 1) % 3] = 1.0
    rewards = np.zeros((1, 3, 1, 3))
    mdp = TabularMdp(transition=transition, rewards=rewards, action_sizes=(1,), gamma=0.9)
    policy = JointPolicy(tables=(np.ones((3, 1)),))
    chain = PolicyChain(
        transition=transition[:, 0, :],
        agent_rewards=np.zeros((1, 3)),
        mean_reward=np.zeros(3),
        stationary=np.full(3, 1.0 / 3.0),
    )
    sampler = ChainSampler(mdp, policy, chain)
    cursor = start_trajectory(sampler, unit_rng(3), start_state=0)
    visited = []
    for _ in range(6):
        sample, cursor = markov_step(sampler, cursor)
        visited.append(sample.next_state)
    assert visited == [1, 2, 0, 1, 2, 0]


def test_trajectory_continuity():
    rng_build = np.random.default_rng(8)
    mdp, policy = make_random_mdp(rng_build, num_states=4, action_sizes=(2, 2))
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain)
    cursor = start_trajectory(sampler, unit_rng(4))
    previous = None
    for _ in range(1000):
        sample, cursor = markov_step(sampler, cursor)
        if previous is not None:
            assert sample.state == previous.next_state
        previous = sample


def test_sampled_rewards_match_reward_tensor():
    rng_build = np.random.default_rng(6)
    mdp, policy = make_random_mdp(rng_build, num_states=3, action_sizes=(2,))
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain)
    rng = unit_rng(5)
    for _ in range(200):
        sample = iid_sample(sampler, rng)
        row = mdp.rewards[:, sample.state, :, sample.next_state]
        assert any(
            np.array_equal(sample.rewards, row[:, a]) for a in range(mdp.num_joint_actions)
        )


def test_reward_noise_stays_clipped():
    mdp, policy = make_two_state_problem()
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain, reward_noise_std=0.8)
    rng = unit_rng(6)
    lo, hi = np.inf, -np.inf
    for _ in range(5000):
        sample = iid_sample(sampler, rng)
        lo = min(lo, sample.rewards.min())
        hi = max(hi, sample.rewards.max())
    assert lo >= 0.0
    assert hi <= mdp.r_max
    assert hi > 0.9  # the noise actually moves the values around


def test_per_agent_sampling_shares_the_state():
    rng_build = np.random.default_rng(10)
    mdp, policy = make_random_mdp(rng_build, num_states=4, action_sizes=(2, 2))
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain)
    rng = unit_rng(7)
    samples = iid_samples_per_agent(sampler, rng)
    assert len(samples) == 2
    assert samples[0].state == samples[1].state


def test_mixing_time_uniform_rows_is_one():
    transition = np.full((3, 3), 1.0 / 3.0)
    stationary = np.full(3, 1.0 / 3.0)
    result = mixing_time(transition, stationary, threshold=0.01)
    assert result.tau == 1


def test_mixing_time_two_state_vs_direct_powering():
    """TV distance of [[0.9,0.1],[0.5,0.5]] decays geometrically at rate 0.4."""
    transition = np.array([[0.9, 0.1], [0.5, 0.5]])
    stationary = np.array([5.0 / 6.0, 1.0 / 6.0])
    threshold = 0.01
    power = np.eye(2)
    tau_direct = None
    for t in range(1, 200):
        power = power @ transition
        tv = 0.5 * np.abs(power - stationary[None, :]).sum(axis=1).max()
        if tv <= threshold:
            tau_direct = t
            break
    result = mixing_time(transition, stationary, threshold=threshold)
    assert result.tau == tau_direct


def test_mixing_time_monotone_in_threshold():
    transition = np.array([[0.9, 0.1], [0.5, 0.5]])
    stationary = np.array([5.0 / 6.0, 1.0 / 6.0])
    taus = [
        mixing_time(transition, stationary, threshold=thr).tau
        for thr in (0.1, 0.01, 0.001)
    ]
    assert taus[0] <= taus[1] <= taus[2]


def test_mixing_time_rate_fit_positive():
    transition = np.array([[0.9, 0.1], [0.5, 0.5]])
    stationary = np.array([5.0 / 6.0, 1.0 / 6.0])
    result = mixing_time(transition, stationary, threshold=0.01)
    assert result.rate_constant > 0.0
    assert len(result.fit_thresholds) == len(result.fit_taus)


def test_mixing_time_cap():
    # a nearly frozen chain cannot mix within a tiny cap
    transition = np.array([[1.0 - 1e-9, 1e-9], [1e-9, 1.0 - 1e-9]])
    stationary = np.array([0.5, 0.5])
    with pytest.raises(CapExceeded):
        mixing_time(transition, stationary, threshold=1e-6, cap=16)


def test_stream_determinism():
    mdp, policy = make_two_state_problem()
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain)

    def draw(rng):
        return [
            (s.state, tuple(s.rewards), s.next_state)
            for s in (iid_sample(sampler, rng) for _ in range(50))
        ]

    assert draw(unit_rng(0, 9)) == draw(unit_rng(0, 9))
    assert draw(unit_rng(0, 9)) != draw(unit_rng(0, 10))
