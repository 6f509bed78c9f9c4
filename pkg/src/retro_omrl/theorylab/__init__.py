from .bounds import (
    BoundReport,
    LipschitzPolicyFamily,
    lemma_a1_check,
    perf_diff_terms,
    return_bound_terms,
    return_gap_terms,
    verify_perf_diff_bound,
    verify_return_bound,
)
from .concentration import (
    CorollaryConfig,
    InfeasibleConfigError,
    corollary_k,
    verify_corollary,
    verify_weissman,
    weissman_bound,
    weissman_cell,
    weissman_grid,
)
from .mdp import (
    OccupancyTable,
    discounted_occupancy,
    exact_return,
    monte_carlo_occupancy,
    monte_carlo_return,
    policy_values,
    value_iteration,
)

__all__ = [
    "BoundReport",
    "CorollaryConfig",
    "InfeasibleConfigError",
    "LipschitzPolicyFamily",
    "OccupancyTable",
    "corollary_k",
    "discounted_occupancy",
    "exact_return",
    "lemma_a1_check",
    "monte_carlo_occupancy",
    "monte_carlo_return",
    "perf_diff_terms",
    "policy_values",
    "return_bound_terms",
    "return_gap_terms",
    "value_iteration",
    "verify_corollary",
    "verify_perf_diff_bound",
    "verify_return_bound",
    "verify_weissman",
    "weissman_bound",
    "weissman_cell",
    "weissman_grid",
]
