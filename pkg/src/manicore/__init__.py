"""Center manifolds of discrete dynamical systems by the parameterization method.

The pipeline: :mod:`linmodel` splits the linear part and localizes the
nonlinearity, :mod:`constants` derives the contraction constants,
:mod:`theta` iterates the fixed-point operators, :mod:`taylor` solves the
expansion order by order, :mod:`aposteriori` bounds the error of an
approximate pair and :mod:`verify` re-checks results by brute force.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .aposteriori import DefectReport, certify, defect_norm, error_constant
from .constants import ConstantsLedger, derive_ledger, epsilon_threshold, ledger_for_problem
from .errors import ManicoreError
from .linmodel import (
    CutoffFunction,
    ProblemInstance,
    SpaceSplitting,
    SplitLinearMap,
    build_splitting,
    load_problem,
    localize,
    parse_problem,
    rescale_norm,
)
from .taylor import TaylorResult, solve_order, taylor_pipeline
from .theta import (
    ConjugacyTriple,
    DerivativeTriple,
    FixedPointResult,
    membership,
    solve_derivative_fixed_point,
    solve_fixed_point,
    theta2_apply,
    theta_apply,
    theta_m_apply,
)
from .verify import (
    fd_derivative_check,
    invariance_check,
    kc_independence,
    orbit_shadowing,
    scaling_check,
    tangency_check,
)

__all__ = [
    "ConjugacyTriple",
    "ConstantsLedger",
    "CutoffFunction",
    "DefectReport",
    "DerivativeTriple",
    "FixedPointResult",
    "ManicoreError",
    "ProblemInstance",
    "SpaceSplitting",
    "SplitLinearMap",
    "TaylorResult",
    "build_splitting",
    "certify",
    "defect_norm",
    "derive_ledger",
    "epsilon_threshold",
    "error_constant",
    "fd_derivative_check",
    "invariance_check",
    "kc_independence",
    "ledger_for_problem",
    "load_problem",
    "localize",
    "membership",
    "orbit_shadowing",
    "parse_problem",
    "rescale_norm",
    "scaling_check",
    "solve_derivative_fixed_point",
    "solve_fixed_point",
    "solve_order",
    "tangency_check",
    "taylor_pipeline",
    "theta2_apply",
    "theta_apply",
    "theta_m_apply",
    "__version__",
]
