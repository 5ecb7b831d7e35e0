"""Perturb-and-MAP inference for discrete pairwise graphical models."""

__version__ = "0.1.0"

from .model import (
    Assignment,
    InfeasibleModelError,
    InvalidModelError,
    PairwiseModel,
    SpinGlassConfig,
    StateSpaceTooLargeError,
    energy,
    from_json,
    generate_spin_glass,
    is_attractive,
    is_forest,
    to_json,
    validate,
)
from .exact import (
    MarginalTable,
    exact_sample,
    log_partition,
    marginal,
    total_variation,
)
from .perturbation import (
    EULER_GAMMA,
    Scheme,
    SeedPath,
    perturb_full,
    perturb_pairwise,
    perturb_unary,
    sample_gumbel,
)
from .mapsolve import (
    CycleError,
    FlowNetwork,
    MapResult,
    NotAttractiveError,
    Strategy,
    exhaustive_map,
    graphcut_map,
    max_flow,
    solve_map,
    tree_map,
)
from .bounds import (
    BoundEstimate,
    bounds_report,
    lower_bound_expected,
    lower_bound_probable,
    upper_bound,
)
from .samplers import (
    AcceptanceEstimate,
    ExpandedModel,
    FamilyKind,
    RestartLimitError,
    SampleBatch,
    SelfReducibilityError,
    UpperBoundFamily,
    acceptance_rate,
    approx_map_sample,
    approx_pair_marginal,
    estimate_logz_full,
    expand_tree,
    gumbel_max_sample,
    make_bound_family,
    unbiased_sample,
)
from .baselines import ChainConfig, gibbs_chain, metropolis_chain
