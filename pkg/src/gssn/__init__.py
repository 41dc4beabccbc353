"""Globalized SCD semismooth* Newton methods for composite problems ``f + g``."""

from .core import (
    CompositeProblem,
    LeastSquares,
    LinearOperator,
    QuadraticForm,
    SmoothFunction,
    gradient_check,
    lipschitz_estimate,
)
from .driver import (
    RunResult,
    SolverConfig,
    SolverState,
    bas_gssn,
    fista_baseline,
    heuristic_multistart,
    pgm_baseline,
)
from .fbe import FbStep, descent_ok, forward_backward, psi_fb, residual
from .prox import (
    L0Norm,
    L1Norm,
    LqNorm,
    ScdElement,
    SeparableSum,
    TrescaFriction,
    ZeroFunction,
)

__version__ = "0.1.0"

__all__ = [
    "CompositeProblem",
    "FbStep",
    "L0Norm",
    "L1Norm",
    "LeastSquares",
    "LinearOperator",
    "LqNorm",
    "QuadraticForm",
    "RunResult",
    "ScdElement",
    "SeparableSum",
    "SmoothFunction",
    "SolverConfig",
    "SolverState",
    "TrescaFriction",
    "ZeroFunction",
    "bas_gssn",
    "descent_ok",
    "fista_baseline",
    "forward_backward",
    "gradient_check",
    "heuristic_multistart",
    "lipschitz_estimate",
    "pgm_baseline",
    "psi_fb",
    "residual",
]
