"""Tabular multi-agent MDPs and the Markov chains they induce.

A team of agents shares one global state and one transition kernel; each agent
observes its own reward channel. Policy evaluation only ever sees the chain
induced by a fixed product-form policy, so this module's main job is turning
an explicit (state, joint action, next state) model into that chain: the state
transition matrix, per-agent expected rewards, and the stationary
distribution.

Joint actions are enumerated lexicographically, agent 0 most significant, so
joint index ``a`` decodes through :func:`joint_action_table`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoConvergence, ReducibleChain, StateSpaceTooLarge

# Hard ceiling on enumerated (s, joint action, s') triples; explicit models
# beyond this do not fit the exact-oracle workflow.
DEFAULT_TRIPLE_CAP = 200_000

_STATIONARY_TOL = 1e-12
_STATIONARY_CAP = 1_000_000
_STATIONARY_RESIDUAL = 1e-10

# Moves for the navigation gridworlds: up, down, left, right, stay
# (row delta, column delta).
_MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1), (0, 0))


@dataclass(frozen=True)
class TabularMdp:
    """Explicit finite MDP with one reward channel per agent.

    ``transition[s, a, s']`` is the probability of moving to ``s'`` from ``s``
    under joint action index ``a``; ``rewards[i, s, a, s']`` is agent ``i``'s
    reward on that event. Rewards live in ``[0, r_max]`` and the discount in
    ``(0, 1)``. Arrays are locked read-only at construction.
    """

    transition: np.ndarray
    rewards: np.ndarray
    action_sizes: tuple[int, ...]
    gamma: float
    r_max: float = 1.0

    def __post_init__(self):
        transition = np.ascontiguousarray(np.asarray(self.transition, dtype=np.float64))
        rewards = np.ascontiguousarray(np.asarray(self.rewards, dtype=np.float64))
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "action_sizes", tuple(int(k) for k in self.action_sizes))

        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise ValueError(f"transition must be (S, A, S), got {transition.shape}")
        num_states, num_joint, _ = transition.shape
        expected_joint = int(np.prod(self.action_sizes))
        if num_joint != expected_joint:
            raise ValueError(
                f"transition has {num_joint} joint actions, action_sizes imply {expected_joint}"
            )
        if rewards.ndim != 4 or rewards.shape[1:] != (num_states, num_joint, num_states):
            raise ValueError(f"rewards must be (n, S, A, S), got {rewards.shape}")
        if np.any(transition < 0):
            raise ValueError("transition probabilities must be nonnegative")
        row_sums = transition.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.r_max <= 0.0:
            raise ValueError(f"r_max must be positive, got {self.r_max}")
        if np.any(rewards < 0.0) or np.any(rewards > self.r_max):
            raise ValueError(f"rewards must lie in [0, {self.r_max}]")

        transition.setflags(write=False)
        rewards.setflags(write=False)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_agents(self) -> int:
        return self.rewards.shape[0]

    @property
    def num_joint_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class JointPolicy:
    """Product-form stochastic policy: one table of shape (S, A_i) per agent."""

    tables: tuple[np.ndarray, ...] = field()

    def __post_init__(self):
        locked = []
        for i, table in enumerate(self.tables):
            arr = np.ascontiguousarray(np.asarray(table, dtype=np.float64))
            if arr.ndim != 2:
                raise ValueError(f"policy table {i} must be 2-D, got shape {arr.shape}")
            if np.any(arr < 0):
                raise ValueError(f"policy table {i} has negative probabilities")
            if np.max(np.abs(arr.sum(axis=1) - 1.0)) > 1e-12:
                raise ValueError(f"policy table {i} rows must sum to 1 within 1e-12")
            arr.setflags(write=False)
            locked.append(arr)
        object.__setattr__(self, "tables", tuple(locked))

    @property
    def num_agents(self) -> int:
        return len(self.tables)


@dataclass(frozen=True)
class PolicyChain:
    """The Markov chain a fixed policy induces on the global state space.

    ``transition`` is the (S, S) state kernel, ``agent_rewards[i, s]`` the
    expected one-step reward of agent ``i`` from state ``s``, ``mean_reward``
    the across-agent mean of those, and ``stationary`` the unique stationary
    distribution (validated to residual 1e-10 at construction).
    """

    transition: np.ndarray
    agent_rewards: np.ndarray
    mean_reward: np.ndarray
    stationary: np.ndarray

    def __post_init__(self):
        for name in ("transition", "agent_rewards", "mean_reward", "stationary"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_agents(self) -> int:
        return self.agent_rewards.shape[0]


def joint_action_table(action_sizes: tuple[int, ...]) -> np.ndarray:
    """Decode table mapping joint action index -> per-agent action indices.

    Row ``a`` of the result is the tuple of individual actions for joint index
    ``a`` under lexicographic enumeration with agent 0 most significant.
    Shape (prod(action_sizes), n).
    """
    sizes = tuple(int(k) for k in action_sizes)
    if any(k < 1 for k in sizes):
        raise ValueError(f"action sizes must be positive, got {sizes}")
    # Plain divmod decomposition: index grids would need one array axis per
    # agent and numpy caps ndim at 64, which an 80-agent team exceeds.
    total = int(np.prod(sizes))
    table = np.zeros((total, len(sizes)), dtype=np.int64)
    remainder = np.arange(total)
    for i in reversed(range(len(sizes))):
        table[:, i] = remainder % sizes[i]
        remainder //= sizes[i]
    return table


def joint_policy_matrix(mdp: TabularMdp, policy: JointPolicy) -> np.ndarray:
    """Probability of each joint action in each state, shape (S, A_joint)."""
    if policy.num_agents != mdp.num_agents:
        raise ValueError(
            f"policy has {policy.num_agents} agents, mdp has {mdp.num_agents}"
        )
    decode = joint_action_table(mdp.action_sizes)
    joint = np.ones((mdp.num_states, mdp.num_joint_actions))
    for i, table in enumerate(policy.tables):
        if table.shape != (mdp.num_states, mdp.action_sizes[i]):
            raise ValueError(
                f"policy table {i} has shape {table.shape}, expected "
                f"{(mdp.num_states, mdp.action_sizes[i])}"
            )
        joint *= table[:, decode[:, i]]
    return joint


def stationary_distribution(transition: np.ndarray) -> np.ndarray:
    """Stationary distribution of an irreducible row-stochastic matrix.

    Power iteration runs on the lazy chain (P + I)/2 so periodicity cannot
    stall it, stopping when successive iterates agree to 1e-12 in L1 (hard cap
    1e6 sweeps), then takes one more fixed-point application as a refinement
    step. Raises NoConvergence if the cap is hit or the final residual
    ``max |dP - d|`` exceeds 1e-10.
    """
    transition = np.asarray(transition, dtype=np.float64)
    num_states = transition.shape[0]
    lazy = 0.5 * (transition + np.eye(num_states))
    dist = np.full(num_states, 1.0 / num_states)
    for _ in range(_STATIONARY_CAP):
        nxt = dist @ lazy
        nxt /= nxt.sum()
        if np.abs(nxt - dist).sum() <= _STATIONARY_TOL:
            dist = nxt
            break
        dist = nxt
    else:
        raise NoConvergence(
            f"stationary distribution power iteration hit the {_STATIONARY_CAP} sweep cap"
        )
    dist = dist @ lazy
    dist /= dist.sum()
    residual = np.max(np.abs(dist @ transition - dist))
    if residual > _STATIONARY_RESIDUAL:
        raise NoConvergence(
            f"stationary distribution residual {residual:.3e} exceeds {_STATIONARY_RESIDUAL}"
        )
    return dist


def _assert_primitive(transition: np.ndarray):
    """Reject chains that are reducible or periodic, in one test.

    A nonnegative matrix is primitive (irreducible and aperiodic) exactly
    when its Wielandt power S^2 - 2S + 2 is entrywise positive, and for a
    primitive matrix every later power stays positive, so it suffices to
    square the boolean adjacency until the exponent clears that bound. The
    boolean form cannot underflow the way repeated float powers would.
    """
    num_states = transition.shape[0]
    bound = num_states * num_states - 2 * num_states + 2
    adjacency = transition > 0.0
    steps = 1
    while steps < bound:
        if adjacency.all():
            # any entrywise-positive power already certifies primitivity
            break
        adjacency = adjacency @ adjacency
        steps *= 2
    if not adjacency.all():
        raise ReducibleChain(
            "induced chain is not irreducible and aperiodic: some long-horizon "
            "transition probability is exactly zero"
        )


def induce_chain(mdp: TabularMdp, policy: JointPolicy) -> PolicyChain:
    """Collapse an MDP and a fixed product policy into a PolicyChain.

    Validates that the result is irreducible and aperiodic before computing
    the stationary distribution; raises ReducibleChain otherwise.
    """
    joint = joint_policy_matrix(mdp, policy)
    transition = np.einsum("sa,sat->st", joint, mdp.transition)
    # einsum keeps row sums at 1 only up to rounding; renormalize the tiny
    # drift so downstream row-sum validations stay exact.
    transition /= transition.sum(axis=1, keepdims=True)
    _assert_primitive(transition)
    agent_rewards = np.einsum("sa,sat,isat->is", joint, mdp.transition, mdp.rewards)
    mean_reward = agent_rewards.mean(axis=0)
    stationary = stationary_distribution(transition)
    return PolicyChain(
        transition=transition,
        agent_rewards=agent_rewards,
        mean_reward=mean_reward,
        stationary=stationary,
    )


def _clipped_move(cell: int, move: int, grid_side: int) -> int:
    row, col = divmod(cell, grid_side)
    drow, dcol = _MOVES[move]
    row = min(max(row + drow, 0), grid_side - 1)
    col = min(max(col + dcol, 0), grid_side - 1)
    return row * grid_side + col


def _manhattan(cell_a: int, cell_b: int, grid_side: int) -> int:
    row_a, col_a = divmod(cell_a, grid_side)
    row_b, col_b = divmod(cell_b, grid_side)
    return abs(row_a - row_b) + abs(col_a - col_b)


def _draw_landmarks(num_agents: int, num_cells: int, rng: np.random.Generator) -> np.ndarray:
    replace = num_agents > num_cells
    return rng.choice(num_cells, size=num_agents, replace=replace)


def build_cooperative_navigation(
    num_agents: int,
    grid_side: int,
    collision_penalty: float = 0.5,
    seed: int = 0,
    gamma: float = 0.9,
    r_max: float = 1.0,
    triple_cap: int = DEFAULT_TRIPLE_CAP,
) -> tuple[TabularMdp, JointPolicy]:
    """Joint-state navigation task: every agent walks the same grid.

    The global state is the tuple of all agent cells, each agent picks one of
    five moves (up/down/left/right/stay, wall-clipped), and agent ``i`` earns
    ``r_max`` minus its normalized Manhattan distance to a private landmark,
    minus ``collision_penalty`` whenever it shares a cell with another agent,
    clipped to [0, r_max]. Distances and collisions are evaluated at the next
    state. Landmarks are drawn by ``seed``; the policy is uniform over moves.

    Raises StateSpaceTooLarge when S * 5^n * S would exceed ``triple_cap``.
    """
    if num_agents < 1:
        raise ValueError("num_agents must be >= 1")
    if grid_side < 2:
        raise ValueError("grid_side must be >= 2 so distances are nondegenerate")
    num_cells = grid_side * grid_side
    num_states = num_cells**num_agents
    num_joint = 5**num_agents
    triples = num_states * num_joint * num_states
    if triples > triple_cap:
        raise StateSpaceTooLarge(
            f"{triples} (s, a, s') triples exceed the cap of {triple_cap}; "
            "use the factored variant for large teams"
        )

    rng = np.random.default_rng(seed)
    landmarks = _draw_landmarks(num_agents, num_cells, rng)
    dist_max = 2 * (grid_side - 1)
    decode = joint_action_table((5,) * num_agents)
    state_shape = (num_cells,) * num_agents

    # rewards are a pure function of the landed state, stored broadcast over
    # (s, a) so the tensor honors that contract even off the transition support
    state_reward = np.zeros((num_agents, num_states))
    for state in range(num_states):
        cells = np.unravel_index(state, state_shape)
        occupancy = np.bincount(cells, minlength=num_cells)
        for i in range(num_agents):
            value = r_max - _manhattan(cells[i], landmarks[i], grid_side) / dist_max
            if occupancy[cells[i]] > 1:
                value -= collision_penalty
            state_reward[i, state] = min(max(value, 0.0), r_max)
    rewards = np.broadcast_to(
        state_reward[:, None, None, :],
        (num_agents, num_states, num_joint, num_states),
    ).copy()

    transition = np.zeros((num_states, num_joint, num_states))
    for state in range(num_states):
        cells = np.unravel_index(state, state_shape)
        for joint_a in range(num_joint):
            next_cells = tuple(
                _clipped_move(cells[i], decode[joint_a, i], grid_side)
                for i in range(num_agents)
            )
            next_state = int(np.ravel_multi_index(next_cells, state_shape))
            transition[state, joint_a, next_state] = 1.0

    mdp = TabularMdp(
        transition=transition,
        rewards=rewards,
        action_sizes=(5,) * num_agents,
        gamma=gamma,
        r_max=r_max,
    )
    uniform = np.full((num_states, 5), 0.2)
    policy = JointPolicy(tables=(uniform,) * num_agents)
    return mdp, policy


def build_cooperative_navigation_factored(
    num_agents: int,
    grid_side: int,
    seed: int = 0,
    gamma: float = 0.9,
    r_max: float = 1.0,
    triple_cap: int = DEFAULT_TRIPLE_CAP,
) -> tuple[TabularMdp, JointPolicy]:
    """Shared-cell navigation variant that stays exact for large teams.

    One pilot (agent 0) steers a single shared cell with the usual five moves;
    every other agent has a single no-op action and simply scores the shared
    cell against its own landmark: ``r_max`` minus normalized Manhattan
    distance at the next state, clipped to [0, r_max]. The state space is one
    grid regardless of team size, so exact enumeration survives teams of 80
    while reward heterogeneity across agents is preserved. There is no
    collision concept here.
    """
    if num_agents < 1:
        raise ValueError("num_agents must be >= 1")
    if grid_side < 2:
        raise ValueError("grid_side must be >= 2 so distances are nondegenerate")
    num_cells = grid_side * grid_side
    triples = num_cells * 5 * num_cells
    if triples > triple_cap:
        raise StateSpaceTooLarge(
            f"{triples} (s, a, s') triples exceed the cap of {triple_cap}"
        )

    rng = np.random.default_rng(seed)
    landmarks = _draw_landmarks(num_agents, num_cells, rng)
    dist_max = 2 * (grid_side - 1)

    state_reward = np.zeros((num_agents, num_cells))
    for cell in range(num_cells):
        for i in range(num_agents):
            value = r_max - _manhattan(cell, landmarks[i], grid_side) / dist_max
            state_reward[i, cell] = min(max(value, 0.0), r_max)
    rewards = np.broadcast_to(
        state_reward[:, None, None, :], (num_agents, num_cells, 5, num_cells)
    ).copy()

    transition = np.zeros((num_cells, 5, num_cells))
    for cell in range(num_cells):
        for move in range(5):
            next_cell = _clipped_move(cell, move, grid_side)
            transition[cell, move, next_cell] = 1.0

    action_sizes = (5,) + (1,) * (num_agents - 1)
    mdp = TabularMdp(
        transition=transition,
        rewards=rewards,
        action_sizes=action_sizes,
        gamma=gamma,
        r_max=r_max,
    )
    tables = [np.full((num_cells, 5), 0.2)]
    tables.extend(np.ones((num_cells, 1)) for _ in range(num_agents - 1))
    policy = JointPolicy(tables=tuple(tables))
    return mdp, policy
