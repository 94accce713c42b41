"""Update-rule oracles: schedules, projection, the main step, the baseline."""

import numpy as np
import pytest

from conftest import make_random_mdp
from ppdtd import (
    ChainSampler,
    Digraph,
    FeatureMap,
    MixingMatrices,
    NonFiniteIterate,
    ProjectionConfig,
    StepSchedule,
    TabularMdp,
    WeightUnderflow,
    build_weights,
    iid_sample,
    iid_samples_per_agent,
    induce_chain,
    init_push_sa,
    init_swarm,
    ppdtd_step,
    project_ball,
    push_sa_step,
    ring_plus_random,
    schedule_value,
    semigradient,
)


def unit_rng(*entropy):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=entropy)))


def two_basis_features():
    return FeatureMap(matrix=np.array([[1.0, 0.0], [0.0, 1.0]]))


def two_cycle_mixing():
    return build_weights(Digraph(2, frozenset({(0, 1), (1, 0)})))


def make_problem(seed, num_states=4, num_agents=3, dim=2):
    """Random MDP + features + ring-plus-shortcuts mixing, one bundle."""
    rng = np.random.default_rng(seed)
    mdp, policy = make_random_mdp(rng, num_states, tuple([2] * num_agents))
    chain = induce_chain(mdp, policy)
    matrix = rng.uniform(-1.0, 1.0, size=(num_states, dim))
    matrix /= np.linalg.norm(matrix, axis=1).max()
    features = FeatureMap(matrix=matrix)
    mixing = build_weights(ring_plus_random(num_agents, 0.3, seed + 1)) if num_agents >= 3 else None
    sampler = ChainSampler(mdp, policy, chain)
    return mdp, chain, features, mixing, sampler


# ---------------------------------------------------------------- schedules


def test_decaying_schedule_values():
    schedule = StepSchedule(kind="decaying", beta_ratio=0.5, scale=1.0, offset=5.0, exponent=1.0)
    alpha0, beta0 = schedule_value(schedule, 0)
    assert alpha0 == pytest.approx(0.2, abs=1e-15)
    assert beta0 == pytest.approx(0.1, abs=1e-15)
    alpha95, _ = schedule_value(schedule, 95)
    assert alpha95 == pytest.approx(0.01, abs=1e-15)


def test_constant_schedule_and_clamp():
    schedule = StepSchedule(kind="constant", beta_ratio=10.0, alpha_const=0.05)
    for t in (0, 7, 1000):
        alpha, beta = schedule_value(schedule, t)
        assert alpha == 0.05
        assert beta == pytest.approx(0.5, abs=1e-15)
    clamped = StepSchedule(kind="constant", beta_ratio=100.0, alpha_const=0.05)
    _, beta = schedule_value(clamped, 3)
    assert beta == 1.0


def test_schedule_array_matches_scalars():
    schedule = StepSchedule(
        kind="decaying", beta_ratio=0.5, scale=3.0, offset=5.0, exponent=0.75
    )
    ts = np.arange(20)
    alphas, betas = schedule_value(schedule, ts)
    assert alphas == pytest.approx(3.0 / (ts + 5.0) ** 0.75, abs=0)
    for t in (0, 4, 19):
        alpha, beta = schedule_value(schedule, t)
        assert alphas[t] == alpha
        assert betas[t] == beta


def test_schedule_validation():
    with pytest.raises(ValueError):
        StepSchedule(kind="linear", beta_ratio=1.0, alpha_const=0.1)
    with pytest.raises(ValueError):
        StepSchedule(kind="constant", beta_ratio=1.0, alpha_const=0.0)
    with pytest.raises(ValueError):
        StepSchedule(kind="constant", beta_ratio=1.0, alpha_const=0.1, scale=1.0)
    with pytest.raises(ValueError):
        StepSchedule(kind="decaying", beta_ratio=1.0, scale=1.0, offset=5.0, exponent=0.5)
    with pytest.raises(ValueError):
        StepSchedule(kind="decaying", beta_ratio=1.0, scale=1.0, offset=0.5, exponent=1.0)
    with pytest.raises(ValueError):
        StepSchedule(kind="decaying", beta_ratio=0.0, scale=1.0, offset=5.0, exponent=1.0)


# ------------------------------------------------------------- semigradient


def test_semigradient_hand_value():
    """phi(s)=(1,0), phi(s')=(0,1), gamma=0.9, r=0.5, theta=(1.5,1.0).

    Residual = 0.5 - 1.5 + 0.9 = -0.1, so the semigradient is (-0.1, 0).
    """
    from ppdtd import Sample

    features = two_basis_features()
    sample = Sample(state=0, rewards=np.array([0.5]), next_state=1)
    grad = semigradient(features, sample, np.array([1.5, 1.0]), 0, 0.9)
    assert grad == pytest.approx([-0.1, 0.0], abs=1e-15)


def test_semigradient_zero_at_zero():
    from ppdtd import Sample

    features = two_basis_features()
    sample = Sample(state=1, rewards=np.array([0.0, 0.0]), next_state=0)
    for agent in (0, 1):
        grad = semigradient(features, sample, np.zeros(2), agent, 0.9)
        assert np.array_equal(grad, np.zeros(2))


def test_semigradient_lipschitz_small_batch():
    """|g(theta) - g(theta')| <= (1 + gamma) |theta - theta'| on random data."""
    _, _, features, _, sampler = make_problem(21)
    rng = unit_rng(22)
    gamma = 0.95
    for _ in range(300):
        sample = iid_sample(sampler, rng)
        theta_a = rng.normal(size=2) * 10.0
        theta_b = rng.normal(size=2) * 10.0
        gap = np.linalg.norm(
            semigradient(features, sample, theta_a, 0, gamma)
            - semigradient(features, sample, theta_b, 0, gamma)
        )
        assert gap <= (1.0 + gamma) * np.linalg.norm(theta_a - theta_b) + 1e-12


# --------------------------------------------------------------- projection


def test_projection_examples():
    assert np.array_equal(project_ball(np.array([0.3, -0.4]), 1.0), [0.3, -0.4])
    shrunk = project_ball(np.array([3.0, 4.0]), 2.5)
    assert shrunk == pytest.approx([1.5, 2.0], rel=1e-12)
    assert np.linalg.norm(shrunk) <= 2.5


def test_projection_rows_and_idempotence():
    rows = np.array([[10.0, 0.0], [0.1, 0.1], [-6.0, 8.0]])
    once = project_ball(rows, 1.0)
    assert np.array_equal(once[1], rows[1])
    norms = np.linalg.norm(once, axis=1)
    assert (norms <= 1.0).all()
    twice = project_ball(once, 1.0)
    assert np.array_equal(once, twice)
    with pytest.raises(ValueError):
        project_ball(rows, 0.0)


def test_projection_norm_never_exceeds_radius():
    rng = unit_rng(30)
    for _ in range(200):
        row = rng.normal(size=5) * 10.0 ** rng.integers(-3, 9)
        radius = float(10.0 ** rng.uniform(-3, 3))
        assert np.linalg.norm(project_ball(row, radius)) <= radius


# ---------------------------------------------------------------- main step


def test_init_swarm_shapes():
    state = init_swarm(4, np.array([1.0, -2.0, 3.0]))
    assert state.parameters.shape == (4, 3)
    assert (state.parameters == np.array([1.0, -2.0, 3.0])).all()
    assert not state.corrections.any()
    assert not state.trackers.any()
    assert state.t == 0
    assert state.num_agents == 4 and state.dim == 3
    with pytest.raises(ValueError):
        init_swarm(2, np.zeros((2, 2)))


def test_first_step_leaves_consensual_parameters_fixed():
    """Trackers start at zero, so step one only loads the correction."""
    _, _, features, mixing, sampler = make_problem(31)
    theta0 = np.array([0.7, -0.3])
    state = init_swarm(mixing.pull.shape[0], theta0)
    sample = iid_sample(sampler, unit_rng(32))
    new = ppdtd_step(state, sample, 0.5, 0.5, mixing, features, 0.9)
    assert new.parameters == pytest.approx(np.repeat(theta0[None, :], 3, axis=0), abs=1e-14)
    assert new.corrections.any()


def test_full_correction_weight_tracks_current_semigradients():
    """beta = 1 discards the carried correction: Q becomes g(theta_new) exactly."""
    _, _, features, mixing, sampler = make_problem(33)
    num = mixing.pull.shape[0]
    state = init_swarm(num, np.array([0.2, 0.2]))
    rng = unit_rng(34)
    for _ in range(20):
        samples = iid_samples_per_agent(sampler, rng)
        state = ppdtd_step(state, samples, 0.1, 1.0, mixing, features, 0.9)
        expected = np.stack(
            [
                semigradient(features, samples[i], state.parameters[i], i, 0.9)
                for i in range(num)
            ]
        )
        assert np.array_equal(state.corrections, expected)


def test_single_agent_full_weight_matches_hand_loop_bitwise():
    """n=1 with identity mixing is delayed TD(0); replayed op for op."""
    mdp, chain, features, _, sampler = make_problem(35, num_agents=1)
    identity = MixingMatrices(
        pull=np.array([[1.0]]),
        push=np.array([[1.0]]),
        pull_weights=np.array([1.0]),
        push_weights=np.array([1.0]),
    )
    gamma = 0.9
    schedule = StepSchedule(kind="decaying", beta_ratio=1e9, scale=2.0, offset=5.0, exponent=1.0)

    rng = unit_rng(36)
    samples = [iid_sample(sampler, rng) for _ in range(200)]

    state = init_swarm(1, np.zeros(2))
    for t, sample in enumerate(samples):
        alpha, beta = schedule_value(schedule, t)
        assert beta == 1.0
        state = ppdtd_step(state, [sample], alpha, beta, identity, features, gamma)

    theta = np.zeros(2)
    tracker = np.zeros(2)
    correction = np.zeros(2)
    for t, sample in enumerate(samples):
        alpha, _ = schedule_value(schedule, t)
        theta = theta + alpha * tracker
        grad = semigradient(features, sample, theta, 0, gamma)
        tracker = (tracker + grad) - correction
        correction = grad

    assert np.array_equal(state.parameters[0], theta)


def test_zero_reward_zero_start_is_a_fixed_point():
    rng = np.random.default_rng(40)
    base, policy = make_random_mdp(rng, 4, (2, 2))
    mdp = TabularMdp(
        transition=base.transition,
        rewards=np.zeros_like(base.rewards),
        action_sizes=base.action_sizes,
        gamma=base.gamma,
    )
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain)
    mixing = two_cycle_mixing()
    features = FeatureMap(matrix=np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5], [0.0, 0.5]]))
    state = init_swarm(2, np.zeros(2))
    stream = unit_rng(41)
    for _ in range(50):
        state = ppdtd_step(state, iid_sample(sampler, stream), 0.3, 0.4, mixing, features, 0.9)
    assert not state.parameters.any()
    assert not state.corrections.any()
    assert not state.trackers.any()


def test_column_sums_of_trackers_follow_corrections():
    """1^T Y stays equal to 1^T Q, the invariant the push matrix preserves."""
    _, _, features, mixing, sampler = make_problem(42, num_agents=4)
    state = init_swarm(4, np.zeros(2))
    rng = unit_rng(43)
    schedule = StepSchedule(kind="decaying", beta_ratio=0.5, scale=1.0, offset=5.0, exponent=1.0)
    for t in range(500):
        alpha, beta = schedule_value(schedule, t)
        state = ppdtd_step(state, iid_sample(sampler, rng), alpha, beta, mixing, features, 0.9)
        drift = np.abs(state.trackers.sum(axis=0) - state.corrections.sum(axis=0)).max()
        assert drift <= 1e-12 * (1.0 + np.linalg.norm(state.corrections))


def test_projection_keeps_rows_inside_ball():
    _, _, features, mixing, sampler = make_problem(44)
    state = init_swarm(3, np.zeros(2))
    rng = unit_rng(45)
    radius = 0.05
    projection = ProjectionConfig(enabled=True, radius=radius)
    for _ in range(100):
        state = ppdtd_step(
            state, iid_sample(sampler, rng), 2.0, 0.9, mixing, features, 0.9, projection
        )
        assert (np.linalg.norm(state.parameters, axis=1) <= radius).all()


def test_non_finite_iterate_reports_the_step():
    _, _, features, mixing, sampler = make_problem(46)
    state = init_swarm(3, np.zeros(2))
    rng = unit_rng(47)
    with pytest.raises(NonFiniteIterate) as info:
        for _ in range(10):
            state = ppdtd_step(
                state, iid_sample(sampler, rng), 1e200, 0.5, mixing, features, 0.9
            )
    assert info.value.iteration >= 1


# ------------------------------------------------------------ push-sum base


def test_push_sa_weights_stay_one_when_doubly_stochastic():
    """The complete graph's push matrix is doubly stochastic: weights fixed."""
    _, _, features, _, sampler = make_problem(50, num_agents=4)
    mixing = build_weights(ring_plus_random(4, 1.0, 0))
    assert mixing.push.sum(axis=1) == pytest.approx(np.ones(4), abs=1e-12)
    state = init_push_sa(4, np.zeros(2))
    rng = unit_rng(51)
    for _ in range(100):
        state = push_sa_step(state, iid_sample(sampler, rng), 0.1, mixing, features, 0.9)
    assert np.array_equal(state.weights, np.ones(4))


def test_push_sa_zero_reward_fixed_point():
    rng = np.random.default_rng(52)
    base, policy = make_random_mdp(rng, 3, (2, 2, 2))
    mdp = TabularMdp(
        transition=base.transition,
        rewards=np.zeros_like(base.rewards),
        action_sizes=base.action_sizes,
        gamma=base.gamma,
    )
    chain = induce_chain(mdp, policy)
    sampler = ChainSampler(mdp, policy, chain)
    mixing = build_weights(ring_plus_random(3, 0.0, 0))
    features = FeatureMap(matrix=np.array([[1.0, 0.0], [0.0, 1.0], [0.5, -0.5]]))
    state = init_push_sa(3, np.zeros(2))
    stream = unit_rng(53)
    for _ in range(50):
        state = push_sa_step(state, iid_sample(sampler, stream), 0.2, mixing, features, 0.9)
    assert not state.numerators.any()
    assert state.parameters == pytest.approx(np.zeros((3, 2)), abs=0)


def test_push_sa_single_agent_is_plain_td_bitwise():
    _, _, features, _, sampler = make_problem(54, num_agents=1)
    identity = MixingMatrices(
        pull=np.array([[1.0]]),
        push=np.array([[1.0]]),
        pull_weights=np.array([1.0]),
        push_weights=np.array([1.0]),
    )
    rng = unit_rng(55)
    samples = [iid_sample(sampler, rng) for _ in range(200)]
    state = init_push_sa(1, np.zeros(2))
    for sample in samples:
        state = push_sa_step(state, [sample], 0.05, identity, features, 0.9)

    theta = np.zeros(2)
    for sample in samples:
        theta = theta + 0.05 * semigradient(features, sample, theta, 0, 0.9)

    assert np.array_equal(state.numerators[0], theta)
    assert np.array_equal(state.weights, np.ones(1))


def test_push_sa_weight_underflow():
    """A sink column in the push matrix drains a weight to zero immediately."""
    mixing = MixingMatrices(
        pull=np.eye(2),
        push=np.array([[1.0, 1.0], [0.0, 0.0]]),
        pull_weights=np.array([1.0, 1.0]),
        push_weights=np.array([2.0, 0.0]),
    )
    _, _, features, _, sampler = make_problem(56, num_agents=2)
    state = init_push_sa(2, np.zeros(2))
    with pytest.raises(WeightUnderflow):
        push_sa_step(state, iid_sample(sampler, unit_rng(57)), 0.1, mixing, features, 0.9)
