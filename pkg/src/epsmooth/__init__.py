"""Optimal smoothing, filtering and prediction for linear systems under the
epsilon-insensitive quadratic loss, solved through dual quadratic programs."""
from .errors import (
    DimensionMismatch,
    EpsmoothError,
    InfeasibleConstraints,
    MissingDual,
    NonPositiveEpsilon,
    NonSymmetricMatrix,
    NotPositiveDefinite,
    SolverError,
)
from .estimators import (
    DualSolution,
    EstimateResult,
    MovingHorizonStep,
    eps_predict,
    eps_smooth,
    eps_smooth_constrained,
    h2_smooth,
    moving_horizon,
    primal_objective,
)
from .model import (
    SECTION4_X0,
    NoiseSpec,
    SystemModel,
    Trajectory,
    WeightSpec,
    section4_model,
    section4_noise,
    section4_weights,
    simulate,
    simulate_saturated,
    standard_normals,
    validate_model,
)
from .operators import ConstraintSet, combine_constraints, encode_constraint_family, stack_operators
from .qpcore import QpProblem, QpSolution, solve_ineq_qp, solve_nonneg_qp
from .verify import KktReport, check_kkt, objective_value, primal_brute_force, random_instance

__version__ = "0.1.0"
