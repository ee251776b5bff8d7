"""Linear algebra, random streams, reverse-mode differentiation and minimizers."""

from .autodiff import UnsupportedPrimitiveError, Var, gradient, value_and_grad
from .linalg import NotPositiveDefiniteError, SymmetryError, cholesky, sym_eig
from .optimize import Adam, MinimizeResult, OptimizationError, OptimizerConfig, minimize
from .rng import RngStream, sample_std_normal

__all__ = [
    "Adam",
    "MinimizeResult",
    "NotPositiveDefiniteError",
    "OptimizationError",
    "OptimizerConfig",
    "RngStream",
    "SymmetryError",
    "UnsupportedPrimitiveError",
    "Var",
    "cholesky",
    "gradient",
    "minimize",
    "sample_std_normal",
    "sym_eig",
    "value_and_grad",
]
