"""Fidelity decay in the quantum kicked rotator.

Exact split-operator evolution on the N-point torus, classical action
differences along standard-map orbits, and the semiclassical predictors built
from them.
"""

__version__ = "0.1.0"

from .errors import (
    AnalysisError,
    BudgetExceededError,
    TorusResonanceError,
    UnreliableEstimateError,
    ValidationError,
)
from .model import PacketSpec, PhasePoint, RotorParams, make_packet, make_rotor_params

__all__ = [
    "__version__",
    "AnalysisError",
    "BudgetExceededError",
    "TorusResonanceError",
    "UnreliableEstimateError",
    "ValidationError",
    "PacketSpec",
    "PhasePoint",
    "RotorParams",
    "make_packet",
    "make_rotor_params",
]
