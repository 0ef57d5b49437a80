"""Exception types shared across the engines."""

from .model import ValidationError


class TorusResonanceError(RuntimeError):
    """Phase folding left empty bins: the rotation number is numerically rational."""


class UnreliableEstimateError(RuntimeError):
    """A classical estimate needed downstream did not converge."""


class BudgetExceededError(RuntimeError):
    """A quadrature grid or matrix would exceed its configured size limit."""


class AnalysisError(ValueError):
    """Invalid input to a fit or comparison (non-positive data, short window, disjoint grids)."""


__all__ = [
    "ValidationError",
    "TorusResonanceError",
    "UnreliableEstimateError",
    "BudgetExceededError",
    "AnalysisError",
]
