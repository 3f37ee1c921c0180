"""Convex aggregation of ordered linear smoothers.

Builds Tikhonov/ridge regularizer families in shared-eigenbasis form,
aggregates them with certified simplex weights, provides the classical
selection baselines (unbiased-risk argmin, GCV, exponential weighting)
and ships a seeded Monte Carlo harness for regret experiments.
"""

from qagg.aggregate import (
    SimplexWeights,
    SolveReport,
    certify_kkt,
    cp_criterion,
    cp_values,
    excess_bound_gap,
    exponential_weights,
    project_to_simplex,
    q_gradient,
    q_objective,
    q_objective_penalized,
    select_cp,
    select_gcv,
    solve_q_aggregation,
)
from qagg.smoother import (
    FamilyUnion,
    GroundTruth,
    OrderedCheckReport,
    check_ordered,
    exact_risk,
    member_risks,
    oracle_index,
    pair_distance,
)
from qagg.spectral import (
    DesignProblem,
    SpectralFamily,
    apply_member,
    apply_weights,
    build_tikhonov_family,
    degrees_of_freedom,
    member_matrix,
    recover_coefficients,
)

__version__ = "0.1.0"

__all__ = [
    "DesignProblem",
    "SpectralFamily",
    "FamilyUnion",
    "GroundTruth",
    "OrderedCheckReport",
    "SimplexWeights",
    "SolveReport",
    "apply_member",
    "apply_weights",
    "build_tikhonov_family",
    "certify_kkt",
    "check_ordered",
    "cp_criterion",
    "cp_values",
    "degrees_of_freedom",
    "exact_risk",
    "excess_bound_gap",
    "exponential_weights",
    "member_matrix",
    "member_risks",
    "oracle_index",
    "pair_distance",
    "project_to_simplex",
    "q_gradient",
    "q_objective",
    "q_objective_penalized",
    "recover_coefficients",
    "select_cp",
    "select_gcv",
    "solve_q_aggregation",
    "__version__",
]
