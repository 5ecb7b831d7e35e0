"""Zero-mean Gumbel noise and its attachment to models.

Three granularities: FULL perturbs every configuration independently (exact
but exponential), UNARY perturbs single-vertex table entries, and PAIRWISE
perturbs pairwise entries on top of the unary ones.

Reproducibility: noise streams are Philox counter-based generators keyed by a
(root seed, derivation path) pair through numpy's SeedSequence spawning, so
parallel replicas replay identically regardless of scheduling.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import (
    DEFAULT_STATE_CAP,
    PairwiseModel,
    assignment_range,
    check_state_cap,
    state_strides,
)
from . import exact

# Euler-Mascheroni constant: the zero-mean Gumbel CDF is exp(-exp(-(t + c))).
EULER_GAMMA = 0.5772156649015329

GUMBEL_VARIANCE = np.pi**2 / 6.0


class Scheme(str, enum.Enum):
    """Perturbation granularity."""

    FULL = "full"
    UNARY = "unary"
    PAIRWISE = "pairwise"


@dataclass(frozen=True)
class SeedPath:
    """Root seed plus a derivation path identifying one noise stream."""

    root_seed: int
    path: tuple[int, ...] = ()

    def child(self, index: int) -> "SeedPath":
        return SeedPath(self.root_seed, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.root_seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


def as_seed_path(seed) -> SeedPath:
    if isinstance(seed, SeedPath):
        return seed
    return SeedPath(int(seed))


def gumbel_quantile(u):
    """Inverse CDF of the zero-mean Gumbel: -ln(-ln(u)) - c for u in (0,1)."""
    return -np.log(-np.log(u)) - EULER_GAMMA


def sample_gumbel(rng: np.random.Generator, size=None):
    """Zero-mean Gumbel draws via the inverse CDF.

    u is uniform on the open interval (0,1): integer draws are offset by 1/2
    so neither endpoint can occur, keeping the transform branch-free.
    """
    u = (rng.integers(0, 1 << 53, size=size) + 0.5) * 2.0**-53
    return gumbel_quantile(u)


def gumbel_cdf(t):
    """CDF of the zero-mean Gumbel distribution."""
    return np.exp(-np.exp(-(np.asarray(t, dtype=np.float64) + EULER_GAMMA)))


def _perturbed_table(table: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Copy of a table with one independent Gumbel added to each finite entry."""
    out = table.copy()
    mask = np.isfinite(table)
    k = int(mask.sum())
    if k:
        out[mask] += sample_gumbel(rng, k)
    return out


def perturb_unary(model: PairwiseModel, rng: np.random.Generator) -> PairwiseModel:
    """Independent Gumbel on every finite unary entry; pairwise untouched.

    Draw order is fixed (vertices in index order, entries in table order) so a
    seeded generator reproduces the same perturbed model.
    """
    return model.replace_tables(unary=[_perturbed_table(u, rng) for u in model.unary])


def perturb_pairwise(model: PairwiseModel, rng: np.random.Generator) -> PairwiseModel:
    """Independent Gumbel on every finite unary and pairwise entry.

    Unary tables are drawn first (vertex order), then pairwise tables (edge
    order).
    """
    unary = [_perturbed_table(u, rng) for u in model.unary]
    pairwise = [_perturbed_table(t, rng) for t in model.pairwise]
    return model.replace_tables(unary=unary, pairwise=pairwise)


def perturb_full(
    model: PairwiseModel,
    rng: np.random.Generator,
    max_states: int = DEFAULT_STATE_CAP,
) -> np.ndarray:
    """theta(x) + gamma(x) over all configurations, one draw per configuration.

    Returned flat in enumeration order.  -inf energies stay -inf.
    """
    total = check_state_cap(model, max_states)
    return exact.energy_table(model, max_states) + sample_gumbel(rng, total)


# ---------------------------------------------------------------------------
# Vectorized Monte Carlo over enumerable models.
#
# Replicates are organized in fixed-size stream chunks, each drawing its noise
# from a SeedPath child generator, so results are a pure function of the root
# seed and replicate count no matter how replicates are scheduled.

STREAM_CHUNK = 1024

_MATRIX_BUDGET = 1 << 22  # floats per (rows x states) energy block


def subset_indicator(model: PairwiseModel, subsets, max_states: int) -> np.ndarray:
    """(num_states, D) one-hot matrix mapping configurations to noise entries.

    Each subset occupies a block of columns, one per joint label of its
    members (mixed radix, first member most significant).
    """
    total = check_state_cap(model, max_states)
    widths = []
    for sub in subsets:
        w = 1
        for v in sub:
            w *= model.domain_sizes[v]
        widths.append(w)
    offsets = np.concatenate([[0], np.cumsum(widths)])
    labels = assignment_range(model.domain_sizes, 0, total)
    mat = np.zeros((total, int(offsets[-1])))
    for k, sub in enumerate(subsets):
        rank = np.zeros(total, dtype=np.int64)
        for v in sub:
            rank = rank * model.domain_sizes[v] + labels[:, v]
        mat[np.arange(total), offsets[k] + rank] = 1.0
    return mat


def perturbed_map_enum(
    model: PairwiseModel,
    subsets,
    scales,
    draws: int,
    seed,
    want_argmax: bool = False,
    max_states: int = DEFAULT_STATE_CAP,
):
    """Maxima (and optionally argmaxes) of `draws` independently perturbed
    energy tables, where each subset contributes one scaled Gumbel table.

    Returns (values, labels) with values shape (draws,) and labels either None
    or a (draws, n) assignment matrix.
    """
    path = as_seed_path(seed)
    base = exact.energy_table(model, max_states)
    total = base.size
    mat = subset_indicator(model, subsets, max_states)
    scale_cols = np.repeat(
        np.asarray(scales, dtype=np.float64), _subset_widths(model, subsets)
    )
    values = np.empty(draws)
    labels = np.empty((draws, model.num_vertices), dtype=np.int64) if want_argmax else None
    rows = max(1, _MATRIX_BUDGET // max(total, 1))
    done = 0
    for chunk_index in range(0, -(-draws // STREAM_CHUNK)):
        gen = path.child(chunk_index).generator()
        b = min(STREAM_CHUNK, draws - done)
        noise = sample_gumbel(gen, (STREAM_CHUNK, mat.shape[1]))[:b] * scale_cols
        for lo in range(0, b, rows):
            hi = min(lo + rows, b)
            table = base[None, :] + noise[lo:hi] @ mat.T
            idx = np.argmax(table, axis=1)
            values[done + lo : done + hi] = table[np.arange(hi - lo), idx]
            if want_argmax:
                strides = state_strides(model.domain_sizes)[None, :]
                sizes = np.asarray(model.domain_sizes)[None, :]
                labels[done + lo : done + hi] = (idx[:, None] // strides) % sizes
        done += b
    return values, labels


def _subset_widths(model: PairwiseModel, subsets) -> list[int]:
    out = []
    for sub in subsets:
        w = 1
        for v in sub:
            w *= model.domain_sizes[v]
        out.append(w)
    return out


def full_perturbation_maxima(
    model: PairwiseModel,
    draws: int,
    seed,
    want_argmax: bool = False,
    max_states: int = DEFAULT_STATE_CAP,
):
    """Like perturbed_map_enum with one subset covering every vertex, but with
    the identity indicator elided: noise is added to the energy table directly.
    """
    path = as_seed_path(seed)
    base = exact.energy_table(model, max_states)
    total = base.size
    values = np.empty(draws)
    labels = np.empty((draws, model.num_vertices), dtype=np.int64) if want_argmax else None
    rows = max(1, _MATRIX_BUDGET // max(total, 1))
    done = 0
    for chunk_index in range(0, -(-draws // STREAM_CHUNK)):
        gen = path.child(chunk_index).generator()
        b = min(STREAM_CHUNK, draws - done)
        for lo in range(0, b, rows):
            hi = min(lo + rows, b)
            table = base[None, :] + sample_gumbel(gen, (hi - lo, total))
            idx = np.argmax(table, axis=1)
            values[done + lo : done + hi] = table[np.arange(hi - lo), idx]
            if want_argmax:
                strides = state_strides(model.domain_sizes)[None, :]
                sizes = np.asarray(model.domain_sizes)[None, :]
                labels[done + lo : done + hi] = (idx[:, None] // strides) % sizes
        done += b
    return values, labels
