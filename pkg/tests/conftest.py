"""Shared fixtures: the desk problem, small random MDPs, reporting hooks."""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest

from ppdtd import (
    ChainSampler,
    JointPolicy,
    TabularMdp,
    build_cooperative_navigation_factored,
    build_weights,
    induce_chain,
    rbf_features,
    ring_plus_random,
    solve_fixed_point,
    spectral_profile,
)

_CRITERION_LINES: list[tuple[int, str]] = []


def record_criterion(number: int, name: str, passed: bool, detail: str):
    """Collect one acceptance-criterion verdict for the terminal summary."""
    status = "PASS" if passed else "FAIL"
    _CRITERION_LINES.append((number, f"criterion {number:2d} {status}: {name} ({detail})"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_CRITERION_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    return record_criterion


def make_random_mdp(
    rng: np.random.Generator,
    num_states: int,
    action_sizes: tuple[int, ...],
    gamma: float = 0.9,
    r_max: float = 1.0,
) -> tuple[TabularMdp, JointPolicy]:
    """Dense random MDP and a random product policy, both strictly positive.

    Strict positivity keeps every induced chain irreducible and aperiodic.
    """
    num_joint = int(np.prod(action_sizes))
    num_agents = len(action_sizes)
    transition = rng.random((num_states, num_joint, num_states)) + 0.05
    transition /= transition.sum(axis=2, keepdims=True)
    rewards = rng.random((num_agents, num_states, num_joint, num_states)) * r_max
    mdp = TabularMdp(
        transition=transition,
        rewards=rewards,
        action_sizes=tuple(action_sizes),
        gamma=gamma,
        r_max=r_max,
    )
    tables = []
    for size in action_sizes:
        table = rng.random((num_states, size)) + 0.1
        table /= table.sum(axis=1, keepdims=True)
        tables.append(table)
    return mdp, JointPolicy(tables=tuple(tables))


def make_two_state_problem(p_stay: float = 0.9, p_back: float = 0.5):
    """One-agent wrapper around the 2-state chain [[p,1-p],[q,1-q]]."""
    transition = np.array(
        [[[p_stay, 1.0 - p_stay]], [[p_back, 1.0 - p_back]]]
    )
    rewards = np.array([[[[1.0, 0.5]], [[0.25, 0.0]]]])
    mdp = TabularMdp(
        transition=transition, rewards=rewards, action_sizes=(1,), gamma=0.9
    )
    policy = JointPolicy(tables=(np.ones((2, 1)),))
    return mdp, policy


@pytest.fixture(scope="session")
def desk():
    """The calibrated desk problem shared by the slower suites."""
    mdp, policy = build_cooperative_navigation_factored(
        num_agents=5, grid_side=3, seed=0, gamma=0.9
    )
    chain = induce_chain(mdp, policy)
    features = rbf_features(num_states=mdp.num_states, num_centers=3, bandwidth=1.5, seed=2)
    graph = ring_plus_random(5, 0.3, seed=1)
    mixing = build_weights(graph)
    spectral = spectral_profile(mixing)
    solution = solve_fixed_point(mdp, policy, chain, features)
    sampler = ChainSampler(mdp, policy, chain)
    return SimpleNamespace(
        mdp=mdp,
        policy=policy,
        chain=chain,
        features=features,
        graph=graph,
        mixing=mixing,
        spectral=spectral,
        solution=solution,
        sampler=sampler,
        gamma=0.9,
    )


def desk_document(**overrides) -> dict:
    """A valid desk config document; dotted keys override section fields."""
    doc = {
        "environment": {
            "generator": "coop_nav_factored",
            "num_agents": 5,
            "grid_side": 3,
            "gamma": 0.9,
            "r_max": 1.0,
            "seed": 0,
        },
        "features": {"num_centers": 3, "bandwidth": 1.5, "seed": 2},
        "graph": {"edge_prob": 0.3, "seed": 1},
        "sampling": {"mode": "iid"},
        "algorithm": {
            "variants": ["ppdtd_decaying"],
            "step_scale": 100.0,
            "beta_scale": 50.0,
            "t_offset": 5.0,
            "horizon": 1000,
        },
        "seeds": [0, 1],
        "master_seed": 0,
        "metrics": {"dense_until": 100, "stride": 100},
        "output": {"directory": "out"},
    }
    for dotted, value in overrides.items():
        if "." in dotted:
            section, key = dotted.split(".", 1)
            if value is None:
                doc[section].pop(key, None)
            else:
                doc[section][key] = value
        else:
            if value is None:
                doc.pop(dotted, None)
            else:
                doc[dotted] = value
    return doc
