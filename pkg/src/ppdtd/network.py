"""Directed communication graphs and their push-pull mixing matrices.

Edges are ordered pairs (i, j) meaning "j can send to i", so information
flows j -> i. The pull matrix mixes over in-neighbors (row-stochastic) and
the push matrix over out-neighbors (column-stochastic); their Perron vectors
are computed at construction and validated to tight residuals, since every
downstream average and diagnostic leans on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, IoFailure, NoConvergence

_PERRON_TOL = 1e-12
_PERRON_CAP = 1_000_000
_PERRON_RESIDUAL = 1e-10
_SLOW_MIXING_MARGIN = 1e-9


@dataclass(frozen=True)
class Digraph:
    """Simple directed graph on nodes 0..num_nodes-1, no self-loops.

    Edge (i, j) records that node j sends to node i.
    """

    num_nodes: int
    edges: frozenset[tuple[int, int]] = field()

    def __post_init__(self):
        object.__setattr__(
            self, "edges", frozenset((int(i), int(j)) for i, j in self.edges)
        )
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be >= 1")
        for i, j in self.edges:
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ValueError(f"edge ({i}, {j}) references a node out of range")
            if i == j:
                raise ValueError(f"self-loop ({i}, {i}) not allowed")

    def in_neighbors(self, node: int) -> tuple[int, ...]:
        """Nodes whose messages ``node`` receives."""
        return tuple(sorted(j for i, j in self.edges if i == node))

    def out_neighbors(self, node: int) -> tuple[int, ...]:
        """Nodes that receive ``node``'s messages."""
        return tuple(sorted(i for i, j in self.edges if j == node))

    def reversed(self) -> "Digraph":
        """Same nodes with every information-flow arc flipped."""
        return Digraph(self.num_nodes, frozenset((j, i) for i, j in self.edges))


def ring_plus_random(num_nodes: int, edge_prob: float, seed: int = 0) -> Digraph:
    """Directed ring i <- i+1 (mod n) plus random extra links.

    Every ordered pair that is not already a ring edge is added independently
    with probability ``edge_prob``; pairs are visited in lexicographic order
    with one uniform draw each, so the graph is reproducible from the seed.
    With edge_prob=1 this is the complete digraph minus self-loops.
    """
    if num_nodes < 3:
        raise ValueError(f"need at least 3 nodes for a ring, got {num_nodes}")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError(f"edge_prob must be in [0, 1], got {edge_prob}")
    ring = {(i, (i + 1) % num_nodes) for i in range(num_nodes)}
    rng = np.random.default_rng(seed)
    edges = set(ring)
    for i in range(num_nodes):
        for j in range(num_nodes):
            if i == j or (i, j) in ring:
                continue
            if rng.random() < edge_prob:
                edges.add((i, j))
    return Digraph(num_nodes, frozenset(edges))


def root_set(graph: Digraph) -> frozenset[int]:
    """Nodes whose information reaches every other node.

    These are exactly the possible roots of spanning trees of the
    information-flow digraph; the set is empty when no spanning tree exists.
    """
    flow = [[] for _ in range(graph.num_nodes)]
    for receiver, sender in graph.edges:
        flow[sender].append(receiver)
    roots = []
    for start in range(graph.num_nodes):
        seen = {start}
        stack = [start]
        while stack:
            node = stack.pop()
            for nxt in flow[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        if len(seen) == graph.num_nodes:
            roots.append(start)
    return frozenset(roots)


def check_rooted_overlap(pull_graph: Digraph, push_transpose_graph: Digraph) -> bool:
    """Whether both graphs have spanning trees with at least one common root.

    The pull matrix's graph and the transpose of the push matrix's graph must
    share a root for the push-pull recursion to reach agreement; a nonempty
    intersection of root sets implies each set is itself nonempty.
    """
    return bool(root_set(pull_graph) & root_set(push_transpose_graph))


def _left_perron(matrix: np.ndarray) -> np.ndarray:
    """Left eigenvector for eigenvalue 1, normalized to sum n."""
    num = matrix.shape[0]
    vec = np.ones(num)
    for _ in range(_PERRON_CAP):
        nxt = vec @ matrix
        nxt *= num / nxt.sum()
        if np.max(np.abs(nxt - vec)) <= _PERRON_TOL:
            return nxt
        vec = nxt
    raise NoConvergence(
        f"left Perron power iteration hit the {_PERRON_CAP} sweep cap"
    )


def _right_perron(matrix: np.ndarray) -> np.ndarray:
    """Right eigenvector for eigenvalue 1, normalized to sum n."""
    num = matrix.shape[0]
    vec = np.ones(num)
    for _ in range(_PERRON_CAP):
        nxt = matrix @ vec
        nxt *= num / nxt.sum()
        if np.max(np.abs(nxt - vec)) <= _PERRON_TOL:
            return nxt
        vec = nxt
    raise NoConvergence(
        f"right Perron power iteration hit the {_PERRON_CAP} sweep cap"
    )


@dataclass(frozen=True)
class MixingMatrices:
    """Pull (row-stochastic) and push (column-stochastic) pair with Perron data.

    ``pull_weights`` u satisfies u^T pull = u^T and ``push_weights`` v
    satisfies push v = v, both normalized to sum n, both entrywise
    nonnegative, with u . v > 0. Residuals are validated to 1e-10 at
    construction and the stochasticity contracts to 1e-12.
    """

    pull: np.ndarray
    push: np.ndarray
    pull_weights: np.ndarray
    push_weights: np.ndarray

    def __post_init__(self):
        for name in ("pull", "push", "pull_weights", "push_weights"):
            arr = np.ascontiguousarray(np.asarray(getattr(self, name), dtype=np.float64))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        num = self.pull.shape[0]
        if self.pull.shape != (num, num) or self.push.shape != (num, num):
            raise ValueError("pull and push must be square matrices of equal size")
        if np.any(self.pull < 0) or np.any(self.push < 0):
            raise ValueError("mixing weights must be nonnegative")
        if np.max(np.abs(self.pull.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("pull rows must sum to 1 within 1e-12")
        if np.max(np.abs(self.push.sum(axis=0) - 1.0)) > 1e-12:
            raise ValueError("push columns must sum to 1 within 1e-12")
        if np.any(self.pull_weights < -1e-15) or np.any(self.push_weights < -1e-15):
            raise ValueError("Perron vectors must be nonnegative")
        if abs(self.pull_weights.sum() - num) > _PERRON_RESIDUAL:
            raise ValueError("pull_weights must sum to n")
        if abs(self.push_weights.sum() - num) > _PERRON_RESIDUAL:
            raise ValueError("push_weights must sum to n")
        if np.max(np.abs(self.pull_weights @ self.pull - self.pull_weights)) > _PERRON_RESIDUAL:
            raise ValueError("pull_weights is not a left fixed vector of pull")
        if np.max(np.abs(self.push @ self.push_weights - self.push_weights)) > _PERRON_RESIDUAL:
            raise ValueError("push_weights is not a right fixed vector of push")
        if float(self.pull_weights @ self.push_weights) <= 0.0:
            raise ValueError("pull and push Perron vectors must overlap (u . v > 0)")

    @property
    def num_nodes(self) -> int:
        return self.pull.shape[0]

    @property
    def weight_overlap(self) -> float:
        """u . v, the scalar every consensus rate in the diagnostics uses."""
        return float(self.pull_weights @ self.push_weights)


def build_weights(graph: Digraph) -> MixingMatrices:
    """Equal-weight mixing matrices for one shared communication graph.

    Row i of the pull matrix puts 1/(deg_in(i)+1) on itself and on each
    in-neighbor; column i of the push matrix puts 1/(deg_out(i)+1) on itself
    and on each out-neighbor. Raises AssumptionViolation when the graph and
    its reverse do not share a spanning-tree root, since no Perron pair with
    positive overlap exists in that case.
    """
    if not check_rooted_overlap(graph, graph.reversed()):
        raise AssumptionViolation(
            "graph and its reverse share no spanning-tree root; "
            "push-pull mixing cannot reach agreement on it"
        )
    num = graph.num_nodes
    pull = np.zeros((num, num))
    push = np.zeros((num, num))
    for i in range(num):
        inn = graph.in_neighbors(i)
        share = 1.0 / (len(inn) + 1)
        pull[i, i] = share
        for j in inn:
            pull[i, j] = share
        out = graph.out_neighbors(i)
        share = 1.0 / (len(out) + 1)
        push[i, i] = share
        for j in out:
            push[j, i] = share
    return MixingMatrices(
        pull=pull,
        push=push,
        pull_weights=_left_perron(pull),
        push_weights=_right_perron(push),
    )


@dataclass(frozen=True)
class SpectralProfile:
    """Contraction diagnostics for a mixing pair. Proxies, not certificates.

    The deflated norms are the largest singular values of pull - 1 u^T / n and
    push - v 1^T / n; the contraction proxies are one minus those, clamped
    into (0, 1]. ``norm_equivalence_proxy`` stands in for the constant that
    relates the weighted norms the theory uses to the Euclidean ones; with
    Euclidean stand-ins throughout the diagnostics it is exactly 1 and is
    labeled a proxy for that reason. ``warnings`` records slow-mixing clamps.
    """

    pull_deflated_norm: float
    push_deflated_norm: float
    pull_contraction_proxy: float
    push_contraction_proxy: float
    norm_equivalence_proxy: float
    warnings: tuple[str, ...]


def _operator_norm(matrix: np.ndarray) -> float:
    """Largest singular value by power iteration on A^T A."""
    if not np.any(matrix):
        return 0.0
    gram = matrix.T @ matrix
    rng = np.random.default_rng(0x5EED)
    vec = rng.standard_normal(matrix.shape[1])
    vec /= np.linalg.norm(vec)
    estimate = 0.0
    for _ in range(_PERRON_CAP):
        nxt = gram @ vec
        norm = np.linalg.norm(nxt)
        if norm == 0.0:
            return 0.0
        nxt /= norm
        if abs(norm - estimate) <= _PERRON_TOL * max(1.0, norm):
            return float(np.sqrt(norm))
        estimate = norm
        vec = nxt
    raise NoConvergence(
        f"operator norm power iteration hit the {_PERRON_CAP} sweep cap"
    )


def spectral_profile(mixing: MixingMatrices) -> SpectralProfile:
    """Contraction proxies from the deflated mixing matrices.

    A deflated norm at or above 1 - 1e-9 means the pair mixes too slowly for
    the proxy to be meaningful; the profile then carries a warning and the
    corresponding proxy is clamped to 1e-9 instead of failing, since these
    numbers only feed diagnostics.
    """
    num = mixing.num_nodes
    ones = np.ones(num)
    pull_deflated = mixing.pull - np.outer(ones, mixing.pull_weights) / num
    push_deflated = mixing.push - np.outer(mixing.push_weights, ones) / num
    pull_norm = _operator_norm(pull_deflated)
    push_norm = _operator_norm(push_deflated)
    warnings = []
    proxies = []
    for label, norm in (("pull", pull_norm), ("push", push_norm)):
        proxy = 1.0 - norm
        if norm >= 1.0 - _SLOW_MIXING_MARGIN:
            warnings.append(
                f"{label} deflated norm {norm:.12g} is at or above 1 - 1e-9; "
                "contraction proxy clamped"
            )
            proxy = _SLOW_MIXING_MARGIN
        proxies.append(min(proxy, 1.0))
    return SpectralProfile(
        pull_deflated_norm=float(pull_norm),
        push_deflated_norm=float(push_norm),
        pull_contraction_proxy=float(proxies[0]),
        push_contraction_proxy=float(proxies[1]),
        norm_equivalence_proxy=1.0,
        warnings=tuple(warnings),
    )


def save_edge_list(graph: Digraph, path: str):
    """Write one 'i j' pair per line, 0-indexed, sorted for reproducibility."""
    try:
        with open(path, "w", encoding="ascii") as handle:
            for i, j in sorted(graph.edges):
                handle.write(f"{i} {j}\n")
    except OSError as exc:
        raise IoFailure(f"cannot write edge list ({exc})", path) from exc


def load_edge_list(path: str, num_nodes: int | None = None) -> Digraph:
    """Read a graph saved by :func:`save_edge_list`.

    ``num_nodes`` defaults to one past the largest node index seen, so pass
    it explicitly when trailing isolated nodes matter.
    """
    edges = set()
    try:
        with open(path, "r", encoding="ascii") as handle:
            for line_no, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 2:
                    raise IoFailure(
                        f"line {line_no} is not an 'i j' pair: {line!r}", path
                    )
                edges.add((int(parts[0]), int(parts[1])))
    except OSError as exc:
        raise IoFailure(f"cannot read edge list ({exc})", path) from exc
    except ValueError as exc:
        raise IoFailure(f"non-integer node index ({exc})", path) from exc
    if num_nodes is None:
        num_nodes = 1 + max((max(i, j) for i, j in edges), default=0)
    return Digraph(num_nodes, frozenset(edges))
