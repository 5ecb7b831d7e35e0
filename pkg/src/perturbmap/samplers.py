"""Samplers driven by randomly perturbed MAP problems.

Three families:

* full-perturbation Gumbel-max sampling, exact but exponential in the number
  of vertices (desk scale only);
* approximate sampling from low-dimensional (unary / pairwise) perturbations,
  with optional replica expansion of forests that tightens anchor-pair
  marginals;
* an unbiased sequential sampler that draws one vertex at a time from a
  self-reducible family of upper bounds and rejects the slack.
"""

from __future__ import annotations

import enum
import math
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import exact
from .bounds import BoundEstimate
from .mapsolve import CycleError, Strategy, solve_map
from .model import (
    DEFAULT_STATE_CAP,
    InvalidModelError,
    PairwiseModel,
    condition,
    index_to_assignment,
    is_forest,
)
from .perturbation import (
    STREAM_CHUNK,
    Scheme,
    SeedPath,
    as_seed_path,
    full_perturbation_maxima,
    perturb_full,
    perturb_pairwise,
    perturb_unary,
    perturbed_map_enum,
    sample_gumbel,
)


class SelfReducibilityError(RuntimeError):
    """A bound family produced a step probability above 1 + tolerance."""


class RestartLimitError(RuntimeError):
    """The rejection sampler hit its restart budget without accepting."""


@dataclass
class SampleBatch:
    """Assignments plus provenance: sampler kind, seed, rejections, timing."""

    samples: np.ndarray  # (draws, n) label matrix
    sampler: str
    seed: SeedPath | None
    restarts: int = 0
    wall_time: float = 0.0


# ---------------------------------------------------------------------------
# Theorem-1 sampling and estimation with full-dimensional perturbations.

def gumbel_max_sample(
    model: PairwiseModel,
    rng: np.random.Generator,
    max_states: int = DEFAULT_STATE_CAP,
) -> np.ndarray:
    """One exactly Gibbs-distributed draw: argmax of a fully perturbed table."""
    table = perturb_full(model, rng, max_states)
    return index_to_assignment(model.domain_sizes, int(np.argmax(table)))


def gumbel_max_batch(
    model: PairwiseModel,
    draws: int,
    seed,
    max_states: int = DEFAULT_STATE_CAP,
) -> SampleBatch:
    start = time.perf_counter()
    path = as_seed_path(seed)
    _, labels = full_perturbation_maxima(
        model, draws, path, want_argmax=True, max_states=max_states
    )
    return SampleBatch(labels, "gumbel-full", path, 0, time.perf_counter() - start)


def chebyshev_bound(draws: int, epsilon: float) -> float:
    """Tail bound pi^2/(6 m eps^2) on |mean of m perturbed maxima - log Z|."""
    return np.pi**2 / (6.0 * draws * epsilon**2)


def estimate_logz_full(
    model: PairwiseModel,
    draws: int,
    seed,
    max_states: int = DEFAULT_STATE_CAP,
) -> BoundEstimate:
    """Sample mean of independent full-perturbation maxima; unbiased for log Z.

    Each maximum is Gumbel-distributed around log Z with variance pi^2/6, so
    the analytic standard error pi/sqrt(6m) is reported alongside the
    empirical one.
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    path = as_seed_path(seed)
    values, _ = full_perturbation_maxima(model, draws, path, max_states=max_states)
    mean = math.fsum(values) / draws
    emp_se = float(values.std(ddof=1)) / math.sqrt(draws) if draws > 1 else None
    return BoundEstimate(
        value=mean,
        kind="point",
        samples=draws,
        std_error=emp_se,
        analytic_std_error=float(np.pi / math.sqrt(6.0 * draws)),
        seed=path,
    )


# ---------------------------------------------------------------------------
# Low-dimensional approximate sampling.

def approx_map_sample(
    model: PairwiseModel,
    scheme: Scheme | str,
    rng: np.random.Generator,
    strategy: Strategy | str = Strategy.AUTO,
    max_states: int = DEFAULT_STATE_CAP,
) -> np.ndarray:
    """Argmax of one low-dimensionally perturbed MAP solve.

    Approximates a Gibbs draw; exact only in degenerate cases (independent
    vertices, single feasible configuration).
    """
    scheme = Scheme(scheme)
    if scheme == Scheme.UNARY:
        perturbed = perturb_unary(model, rng)
    elif scheme == Scheme.PAIRWISE:
        perturbed = perturb_pairwise(model, rng)
    else:
        raise ValueError("approx_map_sample supports UNARY and PAIRWISE schemes")
    return solve_map(perturbed, strategy, max_states).argmax


def _noise_subsets(model: PairwiseModel, scheme: Scheme):
    subsets = [(v,) for v in range(model.num_vertices)]
    if scheme == Scheme.PAIRWISE:
        subsets += [tuple(e) for e in model.edges]
    return subsets


def approx_map_batch(
    model: PairwiseModel,
    scheme: Scheme | str,
    draws: int,
    seed,
    strategy: Strategy | str | None = None,
    max_states: int = DEFAULT_STATE_CAP,
) -> SampleBatch:
    """Batch of perturb-and-MAP draws with reproducible chunked noise streams.

    With strategy None (or EXHAUSTIVE on an enumerable model) the solves are
    vectorized over the configuration table; otherwise each draw perturbs the
    model and calls the requested solver.
    """
    start = time.perf_counter()
    scheme = Scheme(scheme)
    path = as_seed_path(seed)
    enum_ok = model.num_states <= max_states
    if strategy is None and not enum_ok:
        strategy = Strategy.AUTO
    if strategy is None or Strategy(strategy) == Strategy.EXHAUSTIVE:
        subsets = _noise_subsets(model, scheme)
        _, labels = perturbed_map_enum(
            model,
            subsets,
            np.ones(len(subsets)),
            draws,
            path,
            want_argmax=True,
            max_states=max_states,
        )
    else:
        labels = np.empty((draws, model.num_vertices), dtype=np.int64)
        perturb = perturb_unary if scheme == Scheme.UNARY else perturb_pairwise
        for chunk_index in range(0, -(-draws // STREAM_CHUNK)):
            gen = path.child(chunk_index).generator()
            lo = chunk_index * STREAM_CHUNK
            for k in range(lo, min(lo + STREAM_CHUNK, draws)):
                labels[k] = solve_map(perturb(model, gen), strategy, max_states).argmax
    return SampleBatch(
        labels, f"approx-{scheme.value}", path, 0, time.perf_counter() - start
    )


# ---------------------------------------------------------------------------
# Forest expansion (replica construction around an anchor edge).

@dataclass(frozen=True)
class ExpandedModel:
    """Replica expansion of a forest, oriented away from an anchor edge.

    Copies of a vertex at replication depth k carry potentials scaled by
    1/m^k; so do the edges into them and their perturbations.  Assignments
    that agree across all copies of each vertex recover the original energy
    exactly.
    """

    model: PairwiseModel
    copy_map: dict[int, tuple[int, ...]]
    anchor: tuple[int, int]
    vertex_scale: np.ndarray
    edge_scale: np.ndarray


def expand_tree(model: PairwiseModel, anchor_edge, m: int) -> ExpandedModel:
    """Replicate each child subtree m times around the anchor edge (r, s).

    The anchor vertices keep single copies.  Requires a forest containing the
    anchor edge; the expansion is again a forest.
    """
    if m < 1:
        raise ValueError("replication count m must be >= 1")
    if not is_forest(model):
        raise CycleError("expansion requires a forest")
    r, s = int(anchor_edge[0]), int(anchor_edge[1])
    anchor_k = None
    for k, (i, j) in enumerate(model.edges):
        if {i, j} == {r, s}:
            anchor_k = k
            break
    if anchor_k is None:
        raise InvalidModelError(f"anchor edge ({r},{s}) is not in the model")

    neighbors: list[list[tuple[int, int]]] = [[] for _ in range(model.num_vertices)]
    for k, (i, j) in enumerate(model.edges):
        neighbors[i].append((j, k))
        neighbors[j].append((i, k))

    sizes: list[int] = []
    unary: list[np.ndarray] = []
    vertex_scale: list[float] = []
    copy_map: dict[int, list[int]] = {v: [] for v in range(model.num_vertices)}
    edges: list[tuple[int, int]] = []
    tables: list[np.ndarray] = []
    edge_scale: list[float] = []

    def new_copy(v: int, scale: float) -> int:
        cid = len(sizes)
        sizes.append(model.domain_sizes[v])
        unary.append(model.unary[v] * scale)
        vertex_scale.append(scale)
        copy_map[v].append(cid)
        return cid

    def add_edge(cu: int, cv: int, k: int, u: int, scale: float) -> None:
        # cu copies vertex u; orient the stored table to (cu, cv).
        i, _ = model.edges[k]
        t = model.pairwise[k] if i == u else model.pairwise[k].T
        edges.append((cu, cv))
        tables.append(t * scale)
        edge_scale.append(scale)

    visited = [False] * model.num_vertices
    queue: deque[tuple[int, int, int, int]] = deque()  # (vertex, copy, depth, parent)

    rc = new_copy(r, 1.0)
    sc = new_copy(s, 1.0)
    add_edge(rc, sc, anchor_k, r, 1.0)
    visited[r] = visited[s] = True
    queue.append((r, rc, 0, s))
    queue.append((s, sc, 0, r))

    def run(start_queue):
        while start_queue:
            u, cu, depth, parent = start_queue.popleft()
            for v, k in neighbors[u]:
                if v == parent:
                    continue
                visited[v] = True
                scale = m ** -(depth + 1)
                for _ in range(m):
                    cv = new_copy(v, scale)
                    add_edge(cu, cv, k, u, scale)
                    start_queue.append((v, cv, depth + 1, u))

    run(queue)
    for root in range(model.num_vertices):
        if not visited[root]:
            visited[root] = True
            queue.append((root, new_copy(root, 1.0), 0, -1))
            run(queue)

    expanded = PairwiseModel(sizes, unary, edges, tables)
    return ExpandedModel(
        expanded,
        {v: tuple(c) for v, c in copy_map.items()},
        (rc, sc),
        np.asarray(vertex_scale),
        np.asarray(edge_scale),
    )


def _tree_map_batch(model: PairwiseModel, unary_noise, pair_noise) -> np.ndarray:
    """MAP labels for a batch of perturbed copies of one forest.

    unary_noise[v] is (B, d_v); pair_noise[k] is (B, d_i, d_j) aligned with
    the stored edge orientation.  Tie-breaking matches tree_map (first index).
    """
    from .mapsolve import _forest_structure

    order, parent, parent_edge = _forest_structure(model)
    batch = unary_noise[0].shape[0]
    vec = [model.unary[v][None, :] + unary_noise[v] for v in range(model.num_vertices)]
    choice: list[np.ndarray | None] = [None] * model.num_vertices
    for u in reversed(order):
        p = parent[u]
        if p < 0:
            continue
        k = parent_edge[u]
        i, _ = model.edges[k]
        if i == u:
            scores = vec[u][:, :, None] + (model.pairwise[k][None, :, :] + pair_noise[k])
        else:
            scores = vec[u][:, :, None] + (
                model.pairwise[k].T[None, :, :] + pair_noise[k].transpose(0, 2, 1)
            )
        vec[p] = vec[p] + scores.max(axis=1)
        choice[u] = scores.argmax(axis=1)
    labels = np.empty((batch, model.num_vertices), dtype=np.int64)
    rows = np.arange(batch)
    for u in order:
        p = parent[u]
        if p < 0:
            labels[:, u] = np.argmax(vec[u], axis=1)
        else:
            labels[:, u] = choice[u][rows, labels[:, p]]
    return labels


def _expanded_noise(
    exp: ExpandedModel, batch: int, gen: np.random.Generator, scheme: Scheme
):
    """Per-copy depth-scaled noise for one chunk of replicas.

    Under PAIRWISE every expanded edge gets a scaled Gumbel table and every
    non-anchor copy gets scaled unary noise; the anchor unaries stay clean
    because the anchor pair is the conditioning intersection of the expansion
    argument, and unscaled noise there would bias its marginal permanently.
    Under UNARY all copies (anchors included) get scaled unary noise and the
    edges none.
    """
    m = exp.model
    d_u = [m.domain_sizes[v] for v in range(m.num_vertices)]
    flat_u = sample_gumbel(gen, (batch, sum(d_u)))
    unary_noise = []
    pos = 0
    for v, d in enumerate(d_u):
        scale = exp.vertex_scale[v]
        if scheme == Scheme.PAIRWISE and v in exp.anchor:
            scale = 0.0
        unary_noise.append(flat_u[:, pos : pos + d] * scale)
        pos += d
    shapes = [(m.domain_sizes[i], m.domain_sizes[j]) for i, j in m.edges]
    if scheme == Scheme.PAIRWISE:
        flat_p = sample_gumbel(gen, (batch, sum(a * b for a, b in shapes)))
        pair_noise = []
        pos = 0
        for k, (a, b) in enumerate(shapes):
            block = flat_p[:, pos : pos + a * b].reshape(batch, a, b) * exp.edge_scale[k]
            pair_noise.append(block)
            pos += a * b
    else:
        pair_noise = [np.zeros((batch, a, b)) for a, b in shapes]
    return unary_noise, pair_noise


def approx_pair_batch(
    model: PairwiseModel,
    anchor_edge,
    m: int,
    draws: int,
    seed,
    scheme: Scheme | str = Scheme.PAIRWISE,
    max_states: int = DEFAULT_STATE_CAP,
) -> SampleBatch:
    """Anchor-pair label draws from perturbed MAP solves on the expanded forest.

    Each sample row holds the two anchor labels (x_r, x_s) of one perturbed
    MAP solve on the replica expansion.  The scheme picks the noise layout
    (PAIRWISE is the replica-expansion construction; UNARY is the cheap
    ablation).
    """
    start = time.perf_counter()
    scheme = Scheme(scheme)
    if scheme not in (Scheme.UNARY, Scheme.PAIRWISE):
        raise ValueError("pair sampling supports UNARY and PAIRWISE schemes")
    path = as_seed_path(seed)
    exp = expand_tree(model, anchor_edge, m)
    out = np.empty((draws, 2), dtype=np.int64)
    done = 0
    chunk_index = 0
    while done < draws:
        gen = path.child(chunk_index).generator()
        b = min(STREAM_CHUNK, draws - done)
        unary_noise, pair_noise = _expanded_noise(exp, b, gen, scheme)
        labels = _tree_map_batch(exp.model, unary_noise, pair_noise)
        out[done : done + b, 0] = labels[:, exp.anchor[0]]
        out[done : done + b, 1] = labels[:, exp.anchor[1]]
        done += b
        chunk_index += 1
    return SampleBatch(out, "approx-pairwise-expanded", path, 0, time.perf_counter() - start)


def approx_pair_marginal(
    model: PairwiseModel,
    anchor_edge,
    m: int,
    draws: int,
    seed,
    heuristic: bool = False,
    scheme: Scheme | str = Scheme.PAIRWISE,
    strategy: Strategy | str | None = None,
    max_states: int = DEFAULT_STATE_CAP,
) -> exact.MarginalTable:
    """Empirical anchor-pair distribution over perturbed MAP solves.

    On forests the model is replica-expanded around the anchor edge, which
    provably tightens the marginal as m grows.  With heuristic=True no
    expansion happens and any model is accepted; the perturbed model is solved
    directly and the result carries no approximation guarantee.
    """
    r, s = int(anchor_edge[0]), int(anchor_edge[1])
    path = as_seed_path(seed)
    if heuristic:
        batch = approx_map_batch(
            model, scheme, draws, path, strategy=strategy, max_states=max_states
        )
        return exact.empirical_marginal(batch.samples, (r, s), model.domain_sizes)
    batch = approx_pair_batch(model, anchor_edge, m, draws, path, scheme, max_states)
    counts = np.zeros((model.domain_sizes[r], model.domain_sizes[s]))
    np.add.at(counts, (batch.samples[:, 0], batch.samples[:, 1]), 1.0)
    return exact.MarginalTable((r, s), counts / counts.sum())


# ---------------------------------------------------------------------------
# Self-reducible upper bounds and the sequential rejection sampler.

class FamilyKind(str, enum.Enum):
    EXACT_LSE = "exact-lse"
    GUMBEL_MC = "gumbel-mc"


class UpperBoundFamily:
    """Evaluators U_j(x_1..x_j) over a fixed vertex ordering.

    U_n is the model energy itself; going up one level either takes the exact
    conditional log-partition over the free suffix (EXACT_LSE) or a Monte
    Carlo average of unary-perturbed MAP values (GUMBEL_MC).  Values are
    cached per prefix, and the Monte Carlo noise stream is a pure function of
    (seed, prefix), so a family instance is one frozen draw from the bound
    distribution: telescoping products along any path are exact.
    """

    def __init__(
        self,
        model: PairwiseModel,
        order=None,
        kind: FamilyKind | str = FamilyKind.EXACT_LSE,
        mc_samples: int | None = None,
        seed=None,
        strategy: Strategy | str | None = None,
        max_states: int = DEFAULT_STATE_CAP,
        tolerance: float | None = None,
    ):
        self.model = model
        self.kind = FamilyKind(kind)
        n = model.num_vertices
        self.order = tuple(range(n)) if order is None else tuple(int(v) for v in order)
        if sorted(self.order) != list(range(n)):
            raise ValueError("order must be a permutation of the vertices")
        self.strategy = strategy
        self.max_states = max_states
        if self.kind == FamilyKind.GUMBEL_MC:
            if not mc_samples or mc_samples < 1:
                raise ValueError("GUMBEL_MC needs mc_samples >= 1")
            if seed is None:
                raise ValueError("GUMBEL_MC needs a seed")
            self.mc_samples = int(mc_samples)
            self.seed = as_seed_path(seed)
            analytic = float(np.pi / math.sqrt(6.0 * self.mc_samples))
            self.tolerance = (
                math.expm1(8.0 * math.sqrt(2.0) * analytic) if tolerance is None else tolerance
            )
        else:
            self.mc_samples = None
            self.seed = None
            self.tolerance = 1e-9 if tolerance is None else tolerance
        self._values: dict[tuple, tuple[float, float]] = {}
        self._steps: dict[tuple, tuple[np.ndarray, float]] = {}

    def _prefix_rank(self, prefix) -> int:
        rank = 0
        for level, a in enumerate(prefix):
            rank = rank * self.model.domain_sizes[self.order[level]] + int(a)
        return rank

    def _compute(self, prefix) -> tuple[float, float]:
        clamp = {self.order[k]: int(a) for k, a in enumerate(prefix)}
        sub, const, _ = condition(self.model, clamp)
        if sub is None:
            return const, 0.0
        if self.kind == FamilyKind.EXACT_LSE:
            return const + exact.log_partition(sub, self.max_states), 0.0
        stream = self.seed.child(len(prefix)).child(self._prefix_rank(prefix))
        enum_ok = sub.num_states <= self.max_states
        if self.strategy is None and enum_ok:
            subsets = [(v,) for v in range(sub.num_vertices)]
            values, _ = perturbed_map_enum(
                sub,
                subsets,
                np.ones(len(subsets)),
                self.mc_samples,
                stream,
                max_states=self.max_states,
            )
        else:
            strategy = Strategy.AUTO if self.strategy is None else self.strategy
            values = np.empty(self.mc_samples)
            for chunk_index in range(0, -(-self.mc_samples // STREAM_CHUNK)):
                gen = stream.child(chunk_index).generator()
                lo = chunk_index * STREAM_CHUNK
                for k in range(lo, min(lo + STREAM_CHUNK, self.mc_samples)):
                    values[k] = solve_map(
                        perturb_unary(sub, gen), strategy, self.max_states
                    ).value
        mean = math.fsum(values) / self.mc_samples
        se = float(values.std(ddof=1)) / math.sqrt(self.mc_samples) if self.mc_samples > 1 else 0.0
        return const + mean, se

    def evaluate(self, prefix=()) -> float:
        """U_{len(prefix)} at the given prefix (labels along the ordering)."""
        key = tuple(int(a) for a in prefix)
        if key not in self._values:
            self._values[key] = self._compute(key)
        return self._values[key][0]

    def stderr(self, prefix=()) -> float:
        key = tuple(int(a) for a in prefix)
        if key not in self._values:
            self._values[key] = self._compute(key)
        return self._values[key][1]

    def step(self, prefix) -> tuple[np.ndarray, float]:
        """Label probabilities exp(U_j - U_{j-1}) for the next vertex.

        Raises SelfReducibilityError when a probability (or the total)
        exceeds 1 + tolerance; a total in (1, 1 + tolerance] keeps the label
        ratios and drops the rejection mass.
        """
        key = tuple(int(a) for a in prefix)
        if key in self._steps:
            return self._steps[key]
        level = len(key)
        if level >= self.model.num_vertices:
            raise ValueError("no step beyond the last vertex")
        u_prev = self.evaluate(key)
        if not np.isfinite(u_prev):
            raise InvalidModelError("bound family is -inf at a reachable prefix")
        d = self.model.domain_sizes[self.order[level]]
        vals = np.array([self.evaluate(key + (a,)) for a in range(d)])
        probs = np.exp(vals - u_prev)
        total = float(probs.sum())
        if probs.max() > 1.0 + self.tolerance or total > 1.0 + self.tolerance:
            raise SelfReducibilityError(
                f"step probabilities at prefix {key} sum to {total:.6f} "
                f"(max {probs.max():.6f}), beyond tolerance {self.tolerance:.3g}"
            )
        self._steps[key] = (probs, total)
        return probs, total


def make_bound_family(
    model: PairwiseModel,
    order=None,
    kind: FamilyKind | str = FamilyKind.EXACT_LSE,
    mc_samples: int | None = None,
    seed=None,
    strategy: Strategy | str | None = None,
    max_states: int = DEFAULT_STATE_CAP,
    tolerance: float | None = None,
) -> UpperBoundFamily:
    """Construct a self-reducible upper-bound family for unbiased sampling."""
    return UpperBoundFamily(
        model, order, kind, mc_samples, seed, strategy, max_states, tolerance
    )


def _single_pass(
    model: PairwiseModel, family: UpperBoundFamily, rng: np.random.Generator
):
    """One forward pass of the sequential sampler; None on rejection."""
    prefix: tuple[int, ...] = ()
    for _ in range(model.num_vertices):
        probs, total = family.step(prefix)
        u = rng.random() * max(1.0, total)
        chosen = -1
        acc = 0.0
        for a, p in enumerate(probs):
            acc += p
            if u < acc:
                chosen = a
                break
        if chosen < 0:
            return None
        prefix += (chosen,)
    labels = np.empty(model.num_vertices, dtype=np.int64)
    for level, a in enumerate(prefix):
        labels[family.order[level]] = a
    return labels


def unbiased_sample(
    model: PairwiseModel,
    family: UpperBoundFamily,
    rng: np.random.Generator,
    max_restarts: int = 1000,
) -> tuple[np.ndarray, int]:
    """Run the sequential rejection sampler until it accepts.

    Accepted outputs are Gibbs-distributed (exactly for EXACT_LSE families;
    for GUMBEL_MC up to the family's frozen Monte Carlo error).  Returns the
    assignment and the number of rejections that preceded it.
    """
    if max_restarts < 1:
        raise ValueError("max_restarts must be >= 1")
    restarts = 0
    while restarts <= max_restarts:
        labels = _single_pass(model, family, rng)
        if labels is not None:
            return labels, restarts
        restarts += 1
    raise RestartLimitError(f"no acceptance within {max_restarts} restarts")


def unbiased_batch(
    model: PairwiseModel,
    family: UpperBoundFamily,
    draws: int,
    seed,
    max_restarts: int = 1000,
) -> SampleBatch:
    start = time.perf_counter()
    path = as_seed_path(seed)
    gen = path.generator()
    out = np.empty((draws, model.num_vertices), dtype=np.int64)
    restarts = 0
    for k in range(draws):
        out[k], r = unbiased_sample(model, family, gen, max_restarts)
        restarts += r
    return SampleBatch(out, "unbiased", path, restarts, time.perf_counter() - start)


@dataclass(frozen=True)
class AcceptanceEstimate:
    rate: float
    trials: int
    std_error: float


def acceptance_rate(
    model: PairwiseModel,
    family: UpperBoundFamily,
    trials: int,
    rng: np.random.Generator,
) -> AcceptanceEstimate:
    """Fraction of single passes that accept, with a binomial standard error."""
    hits = sum(_single_pass(model, family, rng) is not None for _ in range(trials))
    rate = hits / trials
    return AcceptanceEstimate(rate, trials, math.sqrt(rate * (1.0 - rate) / trials))
