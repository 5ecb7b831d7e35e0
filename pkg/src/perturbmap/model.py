"""Discrete pairwise graphical models: potential tables, energies, spin glasses.

A model assigns an energy theta(x) = sum_i theta_i(x_i) + sum_(i,j) theta_ij(x_i,x_j)
to every configuration x of discrete labels.  Entries may be -inf, which
excludes the configurations touching them.  Models are immutable and are the
single source of truth for energies everywhere else in the package.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

NEG_INF = float("-inf")

# Enumeration-based routines refuse models with more states than this.
DEFAULT_STATE_CAP = 1 << 24


class InvalidModelError(ValueError):
    """Model or assignment violates a structural invariant."""


class InfeasibleModelError(ValueError):
    """Every configuration of the model has energy -inf."""


class StateSpaceTooLargeError(RuntimeError):
    """The model's configuration count exceeds the enumeration cap."""


Assignment = np.ndarray  # one label index per vertex, dtype integer


def _as_table(arr, shape, what: str) -> np.ndarray:
    table = np.asarray(arr, dtype=np.float64)
    if table.shape != shape:
        raise InvalidModelError(f"{what} has shape {table.shape}, expected {shape}")
    if isinstance(arr, np.ndarray) and arr.dtype == np.float64 and not arr.flags.writeable:
        return arr  # already frozen; replica expansions share one table widely
    if np.isnan(table).any() or np.isposinf(table).any():
        raise InvalidModelError(f"{what} contains NaN or +inf; only finite or -inf allowed")
    table = table.copy()
    table.flags.writeable = False
    return table


@dataclass(frozen=True)
class PairwiseModel:
    """Vertex domains plus dense unary and pairwise potential tables."""

    domain_sizes: tuple[int, ...]
    unary: tuple[np.ndarray, ...]
    edges: tuple[tuple[int, int], ...]
    pairwise: tuple[np.ndarray, ...]

    def __init__(self, domain_sizes, unary, edges=(), pairwise=()):
        sizes = tuple(int(d) for d in domain_sizes)
        if not sizes:
            raise InvalidModelError("model needs at least one vertex")
        if any(d < 1 for d in sizes):
            raise InvalidModelError("domain sizes must be >= 1")
        n = len(sizes)
        if len(unary) != n:
            raise InvalidModelError(f"{len(unary)} unary tables for {n} vertices")
        un = tuple(_as_table(u, (sizes[i],), f"unary[{i}]") for i, u in enumerate(unary))

        edge_list = []
        for k, (i, j) in enumerate(edges):
            i, j = int(i), int(j)
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidModelError(f"edge[{k}]=({i},{j}) references a missing vertex")
            if i == j:
                raise InvalidModelError(f"edge[{k}] is a self-loop on vertex {i}")
            edge_list.append((i, j))
        if len(pairwise) != len(edge_list):
            raise InvalidModelError(
                f"{len(pairwise)} pairwise tables for {len(edge_list)} edges"
            )
        seen = set()
        for k, (i, j) in enumerate(edge_list):
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvalidModelError(f"duplicate edge ({i},{j})")
            seen.add(key)
        pw = tuple(
            _as_table(t, (sizes[i], sizes[j]), f"pairwise[{k}]")
            for k, ((i, j), t) in enumerate(zip(edge_list, pairwise))
        )

        object.__setattr__(self, "domain_sizes", sizes)
        object.__setattr__(self, "unary", un)
        object.__setattr__(self, "edges", tuple(edge_list))
        object.__setattr__(self, "pairwise", pw)

    @property
    def num_vertices(self) -> int:
        return len(self.domain_sizes)

    @property
    def num_states(self) -> int:
        return math.prod(self.domain_sizes)

    def replace_tables(self, unary=None, pairwise=None) -> "PairwiseModel":
        """Copy of the model with some tables swapped out (same structure)."""
        return PairwiseModel(
            self.domain_sizes,
            self.unary if unary is None else unary,
            self.edges,
            self.pairwise if pairwise is None else pairwise,
        )


@dataclass(frozen=True)
class SpinGlassConfig:
    """Grid spin glass: fields theta_i ~ U[-f,f], couplings theta_ij ~ U[0,c]."""

    rows: int
    cols: int
    field_range: float = 1.0
    coupling_max: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidModelError("grid dimensions must be >= 1")
        if self.field_range < 0 or self.coupling_max < 0:
            raise InvalidModelError("field_range and coupling_max must be >= 0")


def check_assignment(model: PairwiseModel, x) -> np.ndarray:
    """Validate one assignment against the model; returns it as an int array."""
    labels = np.asarray(x, dtype=np.int64)
    if labels.shape != (model.num_vertices,):
        raise InvalidModelError(
            f"assignment has shape {labels.shape}, expected ({model.num_vertices},)"
        )
    sizes = np.asarray(model.domain_sizes)
    if (labels < 0).any() or (labels >= sizes).any():
        raise InvalidModelError("assignment label out of range")
    return labels


def energy(model: PairwiseModel, x) -> float:
    """theta(x); -inf if any contributing table entry is -inf."""
    labels = check_assignment(model, x)
    total = 0.0
    for i, u in enumerate(model.unary):
        total += u[labels[i]]
    for (i, j), t in zip(model.edges, model.pairwise):
        total += t[labels[i], labels[j]]
    return float(total)


def grid_edges(rows: int, cols: int) -> list[tuple[int, int]]:
    """4-connected grid edges in row-major order (right edge, then down edge)."""
    out = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                out.append((v, v + 1))
            if r + 1 < rows:
                out.append((v, v + cols))
    return out


def generate_spin_glass(cfg: SpinGlassConfig) -> PairwiseModel:
    """Grid spin glass over labels {0,1} encoding spins {-1,+1}.

    Unary table for vertex i is (-theta_i, +theta_i); the pairwise table for
    edge (i,j) is theta_ij * s_i * s_j written out over label pairs, so the
    table energy of an assignment equals the +-1 spin-glass energy exactly.
    Deterministic for a fixed seed (Philox counter-based stream).
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    n = cfg.rows * cfg.cols
    edges = grid_edges(cfg.rows, cfg.cols)
    fields = rng.uniform(-cfg.field_range, cfg.field_range, size=n)
    couplings = rng.uniform(0.0, cfg.coupling_max, size=len(edges))
    unary = [np.array([-f, f]) for f in fields]
    pairwise = [np.array([[w, -w], [-w, w]]) for w in couplings]
    return PairwiseModel([2] * n, unary, edges, pairwise)


def is_attractive(model: PairwiseModel) -> bool:
    """True iff all vertices are binary and every pairwise table is supermodular."""
    if any(d != 2 for d in model.domain_sizes):
        return False
    for t in model.pairwise:
        if not t[0, 0] + t[1, 1] >= t[0, 1] + t[1, 0]:
            return False
    return True


def all_finite(model: PairwiseModel) -> bool:
    return all(np.isfinite(u).all() for u in model.unary) and all(
        np.isfinite(t).all() for t in model.pairwise
    )


def is_forest(model: PairwiseModel) -> bool:
    """True iff the edge graph is cycle-free (union-find)."""
    parent = list(range(model.num_vertices))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in model.edges:
        ri, rj = find(i), find(j)
        if ri == rj:
            return False
        parent[ri] = rj
    return True


def validate(model, feasibility_cap: int = 1 << 12) -> list[str]:
    """All invariant violations found.  Empty list means the model is well formed.

    Accepts a PairwiseModel or a raw model dict (the JSON layout); the dict
    form reports structural problems that the strict constructor would refuse
    to build.  Global feasibility is verified by enumeration only when the
    state space is at most `feasibility_cap`.
    """
    if isinstance(model, PairwiseModel):
        sizes = model.domain_sizes
        unary = model.unary
        edges = model.edges
        pairwise = model.pairwise
    else:
        try:
            sizes = tuple(int(d) for d in model["domain_sizes"])
            unary = [np.asarray([_decode_entry(v) for v in u]) for u in model["unary"]]
            edges = [tuple(int(v) for v in e) for e in model["edges"]]
            pairwise = [
                np.asarray([[_decode_entry(v) for v in row] for row in t])
                for t in model["pairwise"]
            ]
        except (KeyError, TypeError, ValueError) as exc:
            return [f"malformed model data: {exc}"]

    problems = []
    n = len(sizes)
    if any(d < 1 for d in sizes):
        problems.append("domain sizes must be >= 1")
    if len(unary) != n:
        problems.append(f"{len(unary)} unary tables for {n} vertices")
    for i, u in enumerate(unary[:n]):
        if u.shape != (sizes[i],):
            problems.append(f"unary[{i}] shape {u.shape} != ({sizes[i]},)")
        elif np.isneginf(u).all():
            problems.append(f"unary[{i}] is entirely -inf")
    if len(pairwise) != len(edges):
        problems.append(f"{len(pairwise)} pairwise tables for {len(edges)} edges")
    seen = set()
    for k, (i, j) in enumerate(edges):
        if not (0 <= i < n and 0 <= j < n):
            problems.append(f"edge[{k}]=({i},{j}) references a missing vertex")
            continue
        if i == j:
            problems.append(f"edge[{k}] is a self-loop")
            continue
        key = (min(i, j), max(i, j))
        if key in seen:
            problems.append(f"edge[{k}]=({i},{j}) duplicates an earlier edge")
        seen.add(key)
        if k < len(pairwise):
            t = pairwise[k]
            if t.shape != (sizes[i], sizes[j]):
                problems.append(
                    f"pairwise[{k}] shape {t.shape} does not match edge ({i},{j})"
                )
            elif np.isneginf(t).all():
                problems.append(f"pairwise[{k}] is entirely -inf")
    if not problems and math.prod(sizes) <= feasibility_cap:
        checked = model if isinstance(model, PairwiseModel) else from_dict(model)
        energies = batch_energies(
            checked, assignment_range(checked.domain_sizes, 0, checked.num_states)
        )
        if not np.isfinite(energies).any():
            problems.append("model is infeasible: every configuration has energy -inf")
    return problems


# ---------------------------------------------------------------------------
# Configuration enumeration.  Index order is lexicographic with vertex 0 most
# significant, so the first index achieving a maximum is the lexicographically
# smallest assignment.

def state_strides(domain_sizes) -> np.ndarray:
    sizes = np.asarray(domain_sizes, dtype=np.int64)
    strides = np.ones(len(sizes), dtype=np.int64)
    for i in range(len(sizes) - 2, -1, -1):
        strides[i] = strides[i + 1] * sizes[i + 1]
    return strides


def index_to_assignment(domain_sizes, index: int) -> np.ndarray:
    strides = state_strides(domain_sizes)
    sizes = np.asarray(domain_sizes, dtype=np.int64)
    return (index // strides) % sizes


def assignment_range(domain_sizes, start: int, stop: int) -> np.ndarray:
    """(stop-start, n) label matrix for configuration indices [start, stop)."""
    idx = np.arange(start, stop, dtype=np.int64)[:, None]
    strides = state_strides(domain_sizes)[None, :]
    sizes = np.asarray(domain_sizes, dtype=np.int64)[None, :]
    return ((idx // strides) % sizes).astype(np.int64)


def batch_energies(model: PairwiseModel, labels: np.ndarray) -> np.ndarray:
    """Energies of a (B, n) label matrix; -inf propagates per IEEE addition."""
    total = np.zeros(labels.shape[0])
    for i, u in enumerate(model.unary):
        total += u[labels[:, i]]
    for (i, j), t in zip(model.edges, model.pairwise):
        total += t[labels[:, i], labels[:, j]]
    return total


def check_state_cap(model: PairwiseModel, max_states: int) -> int:
    n = model.num_states
    if n > max_states:
        raise StateSpaceTooLargeError(
            f"model has {n} configurations, above the cap of {max_states}"
        )
    return n


def condition(model: PairwiseModel, clamp: dict[int, int]):
    """Restrict a model by fixing some vertices.

    Returns (submodel, constant, free_vertices): the submodel is over the free
    vertices (reindexed in ascending order), `constant` collects the clamped
    unary terms and clamped-clamped edges, and clamped-free edges are folded
    into the free unary tables.  With every vertex clamped the submodel is
    None and `constant` is the full energy.
    """
    for v, a in clamp.items():
        if not 0 <= v < model.num_vertices:
            raise InvalidModelError(f"clamped vertex {v} out of range")
        if not 0 <= a < model.domain_sizes[v]:
            raise InvalidModelError(f"clamped label {a} out of range for vertex {v}")
    free = [v for v in range(model.num_vertices) if v not in clamp]
    new_index = {v: k for k, v in enumerate(free)}
    constant = 0.0
    unary = [model.unary[v].copy() for v in free]
    for v, a in clamp.items():
        constant += model.unary[v][a]
    edges, pairwise = [], []
    for (i, j), t in zip(model.edges, model.pairwise):
        ci, cj = i in clamp, j in clamp
        if ci and cj:
            constant += t[clamp[i], clamp[j]]
        elif ci:
            unary[new_index[j]] += t[clamp[i], :]
        elif cj:
            unary[new_index[i]] += t[:, clamp[j]]
        else:
            edges.append((new_index[i], new_index[j]))
            pairwise.append(t)
    if not free:
        return None, float(constant), free
    sub = PairwiseModel([model.domain_sizes[v] for v in free], unary, edges, pairwise)
    return sub, float(constant), free


# ---------------------------------------------------------------------------
# JSON model format.  -inf is encoded as the string "-inf"; field order is
# fixed so serialization is byte-stable for reproducibility diffs.

def _encode_1d(table: np.ndarray):
    return [("-inf" if math.isinf(v) else v) for v in table.tolist()]


def _encode_2d(table: np.ndarray):
    return [[("-inf" if math.isinf(v) else v) for v in row] for row in table.tolist()]


def _decode_entry(v) -> float:
    if v == "-inf":
        return NEG_INF
    return float(v)


def to_dict(model: PairwiseModel) -> dict:
    return {
        "domain_sizes": list(model.domain_sizes),
        "unary": [_encode_1d(u) for u in model.unary],
        "edges": [[i, j] for i, j in model.edges],
        "pairwise": [_encode_2d(t) for t in model.pairwise],
    }


def from_dict(data: dict) -> PairwiseModel:
    try:
        sizes = data["domain_sizes"]
        unary = [[_decode_entry(v) for v in u] for u in data["unary"]]
        edges = [tuple(e) for e in data["edges"]]
        pairwise = [[[_decode_entry(v) for v in row] for row in t] for t in data["pairwise"]]
    except (KeyError, TypeError) as exc:
        raise InvalidModelError(f"malformed model dict: {exc}") from exc
    return PairwiseModel(sizes, unary, edges, pairwise)


def to_json(model: PairwiseModel) -> str:
    return json.dumps(to_dict(model))


def from_json(text: str) -> PairwiseModel:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidModelError(f"malformed model JSON: {exc}") from exc
    return from_dict(data)
