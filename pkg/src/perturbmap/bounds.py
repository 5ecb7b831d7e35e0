"""Upper and lower bounds on log Z from randomly perturbed MAP values.

* upper_bound: mean of MAP values under unary perturbations (an upper bound
  on log Z in expectation).
* lower_bound_expected: mean of MAP values where averaged subset noise is
  added to the objective (a lower bound in expectation).
* lower_bound_probable: a single MAP value on a replica-expanded model whose
  averaged noise concentrates; a lower bound with high probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import exact
from .mapsolve import Strategy, solve_map
from .model import (
    DEFAULT_STATE_CAP,
    InvalidModelError,
    PairwiseModel,
    StateSpaceTooLargeError,
)
from .perturbation import (
    STREAM_CHUNK,
    SeedPath,
    as_seed_path,
    perturbed_map_enum,
    sample_gumbel,
)

_MAX_EXPANDED_EDGES = 5_000_000


@dataclass(frozen=True)
class BoundEstimate:
    """A scalar bound or estimate of log Z with sampling metadata.

    std_error is the empirical standard error and is present exactly for the
    Monte Carlo kinds; analytic_std_error is pi/sqrt(6m), exact only for the
    full-perturbation point estimate.  epsilon_slack carries the probable
    bound's unsubtracted discrepancy term.
    """

    value: float
    kind: str  # upper | lower-expected | lower-probable | exact | point
    samples: int
    std_error: float | None = None
    analytic_std_error: float | None = None
    epsilon_slack: float | None = None
    seed: SeedPath | None = None


def _scaled_unary_perturbation(
    model: PairwiseModel, scale: float, rng: np.random.Generator
) -> PairwiseModel:
    """Copy with scale * Gumbel added to every finite unary entry."""
    unary = []
    for u in model.unary:
        out = u.copy()
        mask = np.isfinite(u)
        k = int(mask.sum())
        if k:
            out[mask] += scale * sample_gumbel(rng, k)
        unary.append(out)
    return model.replace_tables(unary=unary)


def _solver_loop_maxima(
    model: PairwiseModel,
    scale: float,
    draws: int,
    path: SeedPath,
    strategy: Strategy | str,
    max_states: int,
) -> np.ndarray:
    values = np.empty(draws)
    for chunk_index in range(0, -(-draws // STREAM_CHUNK)):
        gen = path.child(chunk_index).generator()
        lo = chunk_index * STREAM_CHUNK
        for k in range(lo, min(lo + STREAM_CHUNK, draws)):
            perturbed = _scaled_unary_perturbation(model, scale, gen)
            values[k] = solve_map(perturbed, strategy, max_states).value
    return values


def upper_bound(
    model: PairwiseModel,
    draws: int,
    seed,
    strategy: Strategy | str | None = None,
    max_states: int = DEFAULT_STATE_CAP,
) -> BoundEstimate:
    """Mean over draws of max_x {theta(x) + sum_i gamma_i(x_i)}; kind UPPER."""
    if draws < 1:
        raise ValueError("draws must be >= 1")
    path = as_seed_path(seed)
    enum_ok = model.num_states <= max_states
    if strategy is None and enum_ok:
        subsets = [(v,) for v in range(model.num_vertices)]
        values, _ = perturbed_map_enum(
            model, subsets, np.ones(len(subsets)), draws, path, max_states=max_states
        )
    else:
        values = _solver_loop_maxima(
            model, 1.0, draws, path, strategy or Strategy.AUTO, max_states
        )
    mean = math.fsum(values) / draws
    se = float(values.std(ddof=1)) / math.sqrt(draws) if draws > 1 else None
    return BoundEstimate(mean, "upper", draws, std_error=se, seed=path)


def lower_bound_expected(
    model: PairwiseModel,
    subsets,
    draws: int,
    seed,
    strategy: Strategy | str | None = None,
    max_states: int = DEFAULT_STATE_CAP,
) -> BoundEstimate:
    """Mean over draws of max_x {theta(x) + (1/|A|) sum_a gamma_a(x_a)}.

    With singleton subsets this is the cheap local-perturbation configuration;
    any MAP solver applies because the averaged noise folds into unary tables.
    Larger subsets make the perturbed objective non-pairwise, so those run on
    the enumeration path (state-space cap applies).
    """
    if draws < 1:
        raise ValueError("draws must be >= 1")
    subsets = [tuple(int(v) for v in sub) for sub in subsets]
    if not subsets:
        raise ValueError("need at least one subset")
    for sub in subsets:
        if len(set(sub)) != len(sub):
            raise InvalidModelError("subset contains duplicate vertices")
        for v in sub:
            if not 0 <= v < model.num_vertices:
                raise InvalidModelError(f"subset vertex {v} out of range")
        width = math.prod(model.domain_sizes[v] for v in sub)
        if width > max_states:
            raise StateSpaceTooLargeError(
                f"subset {sub} has {width} joint labels, above the cap"
            )
    path = as_seed_path(seed)
    scale = 1.0 / len(subsets)
    singletons = all(len(sub) == 1 for sub in subsets)
    enum_ok = model.num_states <= max_states

    if singletons and set(subsets) == {(v,) for v in range(model.num_vertices)} and (
        strategy is not None or not enum_ok
    ):
        values = _solver_loop_maxima(
            model, scale, draws, path, strategy or Strategy.AUTO, max_states
        )
    else:
        values, _ = perturbed_map_enum(
            model,
            subsets,
            np.full(len(subsets), scale),
            draws,
            path,
            max_states=max_states,
        )
    mean = math.fsum(values) / draws
    se = float(values.std(ddof=1)) / math.sqrt(draws) if draws > 1 else None
    return BoundEstimate(mean, "lower-expected", draws, std_error=se, seed=path)


def expand_for_probable_bound(
    model: PairwiseModel, replicas, seed
) -> tuple[PairwiseModel, np.ndarray]:
    """Cross-product replica expansion with averaged unary noise baked in.

    Vertex i gets m_i copies with unary theta_i/m_i plus an independent Gumbel
    table scaled by 1/m_i per copy; each original edge (i,j) becomes all
    m_i*m_j copy pairs with table theta_ij/(m_i*m_j).  Attractive models stay
    attractive.  Returns the expanded model and the per-vertex copy offsets.
    """
    n = model.num_vertices
    if np.isscalar(replicas):
        m = np.full(n, int(replicas))
    else:
        m = np.asarray(replicas, dtype=np.int64)
        if m.shape != (n,):
            raise InvalidModelError("replicas must be a scalar or one count per vertex")
    if (m < 1).any():
        raise ValueError("replica counts must be >= 1")
    total_edges = sum(m[i] * m[j] for i, j in model.edges)
    if total_edges > _MAX_EXPANDED_EDGES:
        raise StateSpaceTooLargeError(
            f"expansion would create {total_edges} edges, above the cap"
        )
    gen = as_seed_path(seed).generator()
    offsets = np.concatenate([[0], np.cumsum(m)])
    sizes: list[int] = []
    unary: list[np.ndarray] = []
    for i in range(n):
        base = model.unary[i] / m[i]
        mask = np.isfinite(model.unary[i])
        noise = sample_gumbel(gen, (m[i], base.size)) / m[i]
        for k in range(m[i]):
            u = base.copy()
            u[mask] += noise[k][mask]
            sizes.append(model.domain_sizes[i])
            unary.append(u)
    edges: list[tuple[int, int]] = []
    tables: list[np.ndarray] = []
    for (i, j), t in zip(model.edges, model.pairwise):
        scaled = t / (m[i] * m[j])
        scaled.flags.writeable = False  # one shared table per original edge
        oi, oj = int(offsets[i]), int(offsets[j])
        for ki in range(m[i]):
            for kj in range(m[j]):
                edges.append((oi + ki, oj + kj))
                tables.append(scaled)
    return PairwiseModel(sizes, unary, edges, tables), offsets


def lower_bound_probable(
    model: PairwiseModel,
    replicas,
    seed,
    strategy: Strategy | str = Strategy.AUTO,
    max_states: int = DEFAULT_STATE_CAP,
) -> BoundEstimate:
    """Single MAP value on the replica expansion; lower bound in probability.

    The discrepancy term is reported as epsilon_slack=0 rather than
    subtracted: the bound holds up to an epsilon*n slack whose failure
    probability shrinks with the replica counts.
    """
    path = as_seed_path(seed)
    expanded, _ = expand_for_probable_bound(model, replicas, path)
    result = solve_map(expanded, strategy, max_states)
    return BoundEstimate(
        result.value,
        "lower-probable",
        samples=1,
        std_error=None,
        epsilon_slack=0.0,
        seed=path,
    )


def exact_bound(model: PairwiseModel, max_states: int = DEFAULT_STATE_CAP) -> BoundEstimate:
    """Oracle log Z wrapped as a BoundEstimate (kind EXACT)."""
    return BoundEstimate(exact.log_partition(model, max_states), "exact", samples=0)


def bounds_report(
    rows: int,
    cols: int,
    coupling_grid,
    num_seeds: int,
    mc_samples: int,
    replicas: int,
    seed,
    field_range: float = 1.0,
    max_states: int = DEFAULT_STATE_CAP,
) -> list[dict]:
    """Oracle log Z and all three bounds per (coupling, model seed) cell.

    The acceptance proxy min(1, exp(lower_prob - upper)) estimates the
    sequential sampler's acceptance rate Z / exp(U_0) from below.
    """
    from .model import SpinGlassConfig, generate_spin_glass

    path = as_seed_path(seed)
    out = []
    cell = 0
    for c in coupling_grid:
        for model_seed in range(num_seeds):
            cfg = SpinGlassConfig(rows, cols, field_range, float(c), model_seed)
            model = generate_spin_glass(cfg)
            cell_path = path.child(cell)
            logz = exact.log_partition(model, max_states)
            ub = upper_bound(model, mc_samples, cell_path.child(0), max_states=max_states)
            singles = [(v,) for v in range(model.num_vertices)]
            lb = lower_bound_expected(
                model, singles, mc_samples, cell_path.child(1), max_states=max_states
            )
            lp = lower_bound_probable(
                model, replicas, cell_path.child(2), max_states=max_states
            )
            out.append(
                {
                    "c": float(c),
                    "seed": model_seed,
                    "exact_logz": logz,
                    "upper": ub.value,
                    "upper_se": ub.std_error,
                    "lower_exp": lb.value,
                    "lower_exp_se": lb.std_error,
                    "lower_prob": lp.value,
                    "accept_proxy": min(1.0, math.exp(lp.value - ub.value)),
                }
            )
            cell += 1
    return out
