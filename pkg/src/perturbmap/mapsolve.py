"""MAP inference: exhaustive search, max-product on forests, and graph cuts.

The graph-cut path reduces supermodular binary energy maximization to a
minimum s-t cut and solves it with a Dinic-style shortest-augmenting-path
max-flow on the residual level graph.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .model import (
    DEFAULT_STATE_CAP,
    InfeasibleModelError,
    InvalidModelError,
    PairwiseModel,
    all_finite,
    assignment_range,
    batch_energies,
    check_state_cap,
    energy,
    index_to_assignment,
    is_attractive,
    is_forest,
)

_CHUNK = 1 << 16


class NotAttractiveError(ValueError):
    """Graph-cut MAP requires a binary supermodular (attractive) model."""


class CycleError(ValueError):
    """Tree MAP requires a cycle-free edge graph."""


class Strategy(str, enum.Enum):
    AUTO = "auto"
    EXHAUSTIVE = "exhaustive"
    TREE = "tree"
    GRAPHCUT = "graphcut"


@dataclass(frozen=True)
class MapResult:
    argmax: np.ndarray
    value: float
    solver: str
    ties_possible: bool


# ---------------------------------------------------------------------------
# Max-flow / min-cut.

class FlowNetwork:
    """s-t network with finite non-negative arc capacities."""

    def __init__(self, num_nodes: int, source: int, sink: int):
        if not (0 <= source < num_nodes and 0 <= sink < num_nodes):
            raise InvalidModelError("source/sink out of range")
        if source == sink:
            raise InvalidModelError("source and sink must differ")
        self.num_nodes = num_nodes
        self.source = source
        self.sink = sink
        self._head: list[int] = []  # arc target; forward arcs at even ids
        self._tail: list[int] = []
        self._cap: list[float] = []
        self._adj: list[list[int]] = [[] for _ in range(num_nodes)]

    def add_arc(self, u: int, v: int, capacity: float) -> None:
        if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes) or u == v:
            raise InvalidModelError(f"bad arc ({u},{v})")
        if not np.isfinite(capacity) or capacity < 0:
            raise InvalidModelError(f"arc capacity {capacity} must be finite and >= 0")
        a = len(self._cap)
        self._head += [v, u]
        self._tail += [u, v]
        self._cap += [float(capacity), 0.0]
        self._adj[u].append(a)
        self._adj[v].append(a + 1)

    @property
    def arcs(self) -> list[tuple[int, int, float]]:
        return [
            (self._tail[a], self._head[a], self._cap[a])
            for a in range(0, len(self._cap), 2)
        ]


@dataclass(frozen=True)
class FlowResult:
    value: float
    source_side: np.ndarray  # bool per node: reachable from s in the residual


def max_flow(net: FlowNetwork) -> FlowResult:
    """Dinic: BFS level graphs + blocking flows with current-arc pointers."""
    n, s, t = net.num_nodes, net.source, net.sink
    head, tail, adj = net._head, net._tail, net._adj
    resid = net._cap.copy()
    tol = 1e-12 * max(max(resid, default=0.0), 1.0)

    total = 0.0
    level = [-1] * n
    while True:
        for i in range(n):
            level[i] = -1
        level[s] = 0
        queue = deque([s])
        while queue:
            u = queue.popleft()
            lu = level[u] + 1
            for a in adj[u]:
                v = head[a]
                if level[v] < 0 and resid[a] > tol:
                    level[v] = lu
                    queue.append(v)
        if level[t] < 0:
            break

        ptr = [0] * n
        while True:
            # One augmenting path in the level graph, 0.0 when exhausted.
            path: list[int] = []
            u = s
            pushed = 0.0
            while True:
                if u == t:
                    pushed = min(resid[a] for a in path)
                    for a in path:
                        resid[a] -= pushed
                        resid[a ^ 1] += pushed
                    break
                advanced = False
                arcs_u = adj[u]
                while ptr[u] < len(arcs_u):
                    a = arcs_u[ptr[u]]
                    if resid[a] > tol and level[head[a]] == level[u] + 1:
                        path.append(a)
                        u = head[a]
                        advanced = True
                        break
                    ptr[u] += 1
                if not advanced:
                    level[u] = -1
                    if not path:
                        break
                    a = path.pop()
                    u = tail[a]
                    ptr[u] += 1
            if pushed <= 0.0:
                break
            total += pushed

    reach = np.zeros(n, dtype=bool)
    reach[s] = True
    queue = deque([s])
    while queue:
        u = queue.popleft()
        for a in adj[u]:
            v = head[a]
            if not reach[v] and resid[a] > tol:
                reach[v] = True
                queue.append(v)
    return FlowResult(value=total, source_side=reach)


# ---------------------------------------------------------------------------
# Solvers.

def exhaustive_map(model: PairwiseModel, max_states: int = DEFAULT_STATE_CAP) -> MapResult:
    """Global maximizer by enumeration; ties broken lexicographically smallest."""
    total = check_state_cap(model, max_states)
    best = -np.inf
    best_index = -1
    ties = 0
    for start in range(0, total, _CHUNK):
        stop = min(start + _CHUNK, total)
        e = batch_energies(model, assignment_range(model.domain_sizes, start, stop))
        peak = float(e.max())
        if peak > best:
            best = peak
            best_index = start + int(np.argmax(e))
            ties = int((e == peak).sum())
        elif peak == best and np.isfinite(peak):
            ties += int((e == peak).sum())
    if not np.isfinite(best):
        raise InfeasibleModelError("every configuration has energy -inf")
    argmax = index_to_assignment(model.domain_sizes, best_index)
    return MapResult(argmax, energy(model, argmax), Strategy.EXHAUSTIVE.value, ties > 1)


def _forest_structure(model: PairwiseModel):
    """(order, parent, parent_edge) for a BFS orientation away from the roots.

    Roots are the smallest vertex of each component.  Raises CycleError if the
    edge graph has a cycle (including duplicate edges).
    """
    n = model.num_vertices
    neighbors: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for k, (i, j) in enumerate(model.edges):
        neighbors[i].append((j, k))
        neighbors[j].append((i, k))
    if len(model.edges) >= n:
        raise CycleError("edge graph is not a forest")
    order: list[int] = []
    parent = [-1] * n
    parent_edge = [-1] * n
    visited = [False] * n
    for root in range(n):
        if visited[root]:
            continue
        visited[root] = True
        queue = deque([root])
        while queue:
            u = queue.popleft()
            order.append(u)
            for v, k in neighbors[u]:
                if v == parent[u] and k == parent_edge[u]:
                    continue
                if visited[v]:
                    raise CycleError("edge graph is not a forest")
                visited[v] = True
                parent[v] = u
                parent_edge[v] = k
                queue.append(v)
    return order, parent, parent_edge


def tree_map(model: PairwiseModel) -> MapResult:
    """Exact MAP on a forest by max-product messages with argmax backtracking.

    Tie-breaking picks the smallest label at the root and at every backtrack
    step.
    """
    order, parent, parent_edge = _forest_structure(model)
    n = model.num_vertices
    vec = [u.astype(np.float64).copy() for u in model.unary]
    choice: list[np.ndarray | None] = [None] * n
    ties = False

    for u in reversed(order):
        p = parent[u]
        if p < 0:
            continue
        k = parent_edge[u]
        i, j = model.edges[k]
        table = model.pairwise[k] if i == u else model.pairwise[k].T
        scores = vec[u][:, None] + table  # (d_u, d_p)
        msg = scores.max(axis=0)
        choice[u] = scores.argmax(axis=0)
        if (np.isfinite(msg) & ((scores == msg).sum(axis=0) > 1)).any():
            ties = True
        vec[p] = vec[p] + msg

    labels = np.zeros(n, dtype=np.int64)
    value = 0.0
    for u in order:
        p = parent[u]
        if p < 0:
            peak = float(vec[u].max())
            if not np.isfinite(peak):
                raise InfeasibleModelError("every configuration has energy -inf")
            value += peak
            labels[u] = int(np.argmax(vec[u]))
            if int((vec[u] == peak).sum()) > 1:
                ties = True
        else:
            labels[u] = int(choice[u][labels[p]])
    return MapResult(labels, energy(model, labels), Strategy.TREE.value, ties)


def _cut_network(model: PairwiseModel) -> FlowNetwork:
    """Reduce supermodular binary maximization to min s-t cut capacities.

    Costs are the negated energies; each pairwise cost splits into unary
    shifts plus one non-negative arc capacity (the supermodular surplus), and
    per-vertex cost differences become terminal arcs.
    """
    n = model.num_vertices
    cost0 = np.array([-u[0] for u in model.unary])
    cost1 = np.array([-u[1] for u in model.unary])
    source, sink = n, n + 1
    net = FlowNetwork(n + 2, source, sink)
    if model.edges:
        tables = np.stack(model.pairwise)
        t00, t01 = tables[:, 0, 0], tables[:, 0, 1]
        t10, t11 = tables[:, 1, 0], tables[:, 1, 1]
        lam = (t00 + t11) - (t01 + t10)
        ei = np.array([e[0] for e in model.edges])
        ej = np.array([e[1] for e in model.edges])
        np.add.at(cost1, ei, t00 - t10)
        np.add.at(cost1, ej, t10 - t11)
        for k in range(len(model.edges)):
            if lam[k] > 0.0:
                net.add_arc(int(ei[k]), int(ej[k]), float(lam[k]))
    delta = cost1 - cost0
    for i in range(n):
        if delta[i] > 0.0:
            net.add_arc(source, i, float(delta[i]))
        elif delta[i] < 0.0:
            net.add_arc(i, sink, float(-delta[i]))
    return net


def graphcut_map(model: PairwiseModel) -> MapResult:
    """Exact MAP for attractive binary models via min cut.

    Vertices reachable from the source in the residual graph take label 0;
    ties between optimal labelings are resolved by that reachability set.
    """
    if not is_attractive(model):
        raise NotAttractiveError("graph-cut MAP requires a binary supermodular model")
    if not all_finite(model):
        raise InvalidModelError("graph-cut MAP requires all-finite potentials")
    net = _cut_network(model)
    flow = max_flow(net)
    labels = (~flow.source_side[: model.num_vertices]).astype(np.int64)
    return MapResult(labels, energy(model, labels), Strategy.GRAPHCUT.value, True)


def solve_map(
    model: PairwiseModel,
    strategy: Strategy | str = Strategy.AUTO,
    max_states: int = DEFAULT_STATE_CAP,
) -> MapResult:
    """Dispatch: AUTO prefers GRAPHCUT, then TREE, then EXHAUSTIVE."""
    strategy = Strategy(strategy)
    if strategy == Strategy.AUTO:
        if is_attractive(model) and all_finite(model):
            strategy = Strategy.GRAPHCUT
        elif is_forest(model):
            strategy = Strategy.TREE
        else:
            strategy = Strategy.EXHAUSTIVE
    if strategy == Strategy.GRAPHCUT:
        return graphcut_map(model)
    if strategy == Strategy.TREE:
        return tree_map(model)
    return exhaustive_map(model, max_states)
