"""Brute-force ground truth: exact log-partition, marginals, and sampling.

Everything here enumerates the full configuration space, so it only works on
small models (capped by DEFAULT_STATE_CAP), but it is the oracle that every
sampler and bound in this package is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .model import (
    DEFAULT_STATE_CAP,
    InfeasibleModelError,
    InvalidModelError,
    PairwiseModel,
    assignment_range,
    batch_energies,
    check_state_cap,
)

_CHUNK = 1 << 16


@dataclass(frozen=True)
class MarginalTable:
    """Exact or empirical joint distribution of a small vertex subset."""

    subset: tuple[int, ...]
    probs: np.ndarray

    def __post_init__(self):
        if len(set(self.subset)) != len(self.subset):
            raise InvalidModelError("marginal subset contains duplicate vertices")
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != len(self.subset):
            raise InvalidModelError("marginal table rank does not match subset size")
        if (p < -1e-12).any():
            raise InvalidModelError("marginal probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-9:
            raise InvalidModelError(f"marginal probabilities sum to {p.sum()}, not 1")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "subset", tuple(int(v) for v in self.subset))
        object.__setattr__(self, "probs", p)


def _chunks(total: int):
    for start in range(0, total, _CHUNK):
        yield start, min(start + _CHUNK, total)


def log_partition(model: PairwiseModel, max_states: int = DEFAULT_STATE_CAP) -> float:
    """log Z by streaming log-sum-exp over all configurations.

    Configurations with energy -inf contribute zero; a fully infeasible model
    yields -inf.
    """
    total = check_state_cap(model, max_states)
    acc = -np.inf
    for start, stop in _chunks(total):
        e = batch_energies(model, assignment_range(model.domain_sizes, start, stop))
        acc = np.logaddexp(acc, logsumexp(e))
    return float(acc)


def energy_table(model: PairwiseModel, max_states: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """Flat energy vector over all configurations in enumeration order."""
    total = check_state_cap(model, max_states)
    out = np.empty(total)
    for start, stop in _chunks(total):
        out[start:stop] = batch_energies(
            model, assignment_range(model.domain_sizes, start, stop)
        )
    return out


def marginal(
    model: PairwiseModel, subset, max_states: int = DEFAULT_STATE_CAP
) -> MarginalTable:
    """Exact joint marginal of up to 4 vertices under the Gibbs distribution."""
    subset = tuple(int(v) for v in subset)
    if len(subset) > 4:
        raise InvalidModelError("marginal subsets are limited to 4 vertices")
    if len(set(subset)) != len(subset):
        raise InvalidModelError("marginal subset contains duplicate vertices")
    for v in subset:
        if not 0 <= v < model.num_vertices:
            raise InvalidModelError(f"marginal vertex {v} out of range")
    total = check_state_cap(model, max_states)
    shape = tuple(model.domain_sizes[v] for v in subset)

    # Two passes: global max for stable exponentiation, then bucket sums.
    peak = -np.inf
    for start, stop in _chunks(total):
        e = batch_energies(model, assignment_range(model.domain_sizes, start, stop))
        peak = max(peak, float(e.max()))
    if not np.isfinite(peak):
        raise InfeasibleModelError("cannot take marginals of an infeasible model")

    sums = np.zeros(shape)
    cols = list(subset)
    for start, stop in _chunks(total):
        labels = assignment_range(model.domain_sizes, start, stop)
        w = np.exp(batch_energies(model, labels) - peak)
        np.add.at(sums, tuple(labels[:, c] for c in cols), w)
    return MarginalTable(subset, sums / sums.sum())


def vertex_marginals(
    model: PairwiseModel, max_states: int = DEFAULT_STATE_CAP
) -> list[MarginalTable]:
    """All single-vertex marginals from one enumeration pass."""
    total = check_state_cap(model, max_states)
    peak = -np.inf
    for start, stop in _chunks(total):
        e = batch_energies(model, assignment_range(model.domain_sizes, start, stop))
        peak = max(peak, float(e.max()))
    if not np.isfinite(peak):
        raise InfeasibleModelError("cannot take marginals of an infeasible model")
    sums = [np.zeros(d) for d in model.domain_sizes]
    for start, stop in _chunks(total):
        labels = assignment_range(model.domain_sizes, start, stop)
        w = np.exp(batch_energies(model, labels) - peak)
        for i in range(model.num_vertices):
            np.add.at(sums[i], labels[:, i], w)
    return [MarginalTable((i,), s / s.sum()) for i, s in enumerate(sums)]


def _suffix_tables(model: PairwiseModel, max_states: int) -> list[np.ndarray]:
    """tables[j] = sum over x_{j+1}..x_n of exp(theta - peak), shape sizes[:j+1]."""
    total = check_state_cap(model, max_states)
    e = energy_table(model, max_states).reshape(model.domain_sizes)
    peak = float(e.max()) if total else -np.inf
    if not np.isfinite(peak):
        raise InfeasibleModelError("cannot sample from an infeasible model")
    tables = [None] * model.num_vertices
    t = np.exp(e - peak)
    for j in range(model.num_vertices - 1, -1, -1):
        tables[j] = t
        t = t.sum(axis=j)
    return tables


def sample(
    model: PairwiseModel,
    draws: int,
    rng: np.random.Generator,
    max_states: int = DEFAULT_STATE_CAP,
) -> np.ndarray:
    """(draws, n) exact Gibbs samples via sequential conditionals.

    The conditional p(x_j | x_1..x_{j-1}) proportional to the suffix sum
    sum_{x_{j+1}..x_n} exp(theta) is computed by enumeration once and shared
    across draws.
    """
    tables = _suffix_tables(model, max_states)
    out = np.empty((draws, model.num_vertices), dtype=np.int64)
    prefix = np.zeros(draws, dtype=np.int64)
    for j, d in enumerate(model.domain_sizes):
        flat = tables[j].reshape(-1, d)
        weights = flat[prefix]
        cum = np.cumsum(weights, axis=1)
        u = rng.random(draws) * cum[:, -1]
        choice = (u[:, None] >= cum[:, :-1]).sum(axis=1)
        out[:, j] = choice
        prefix = prefix * d + choice
    return out


def exact_sample(
    model: PairwiseModel,
    rng: np.random.Generator,
    max_states: int = DEFAULT_STATE_CAP,
) -> np.ndarray:
    """One draw distributed exactly as the Gibbs distribution."""
    return sample(model, 1, rng, max_states)[0]


def distribution(model: PairwiseModel, max_states: int = DEFAULT_STATE_CAP) -> np.ndarray:
    """Flat vector of exact configuration probabilities in enumeration order."""
    e = energy_table(model, max_states)
    peak = float(e.max())
    if not np.isfinite(peak):
        raise InfeasibleModelError("infeasible model has no distribution")
    w = np.exp(e - peak)
    return w / w.sum()


def total_variation(p: MarginalTable, q: MarginalTable) -> float:
    """0.5 * sum |p - q| over matching subsets."""
    if p.subset != q.subset or p.probs.shape != q.probs.shape:
        raise InvalidModelError("total variation requires matching subsets and shapes")
    return 0.5 * float(np.abs(p.probs - q.probs).sum())


def empirical_marginal(samples: np.ndarray, subset, domain_sizes) -> MarginalTable:
    """Empirical joint frequency table of `subset` over a (B, n) sample matrix."""
    subset = tuple(int(v) for v in subset)
    shape = tuple(domain_sizes[v] for v in subset)
    counts = np.zeros(shape)
    np.add.at(counts, tuple(samples[:, v] for v in subset), 1.0)
    return MarginalTable(subset, counts / counts.sum())
