"""Finite-dimensional approximation tools for vortex flows on toric targets."""
from .errors import (
    NumericalError,
    ToricVortexError,
    ValidationError,
)
from .toric import TorusAction, classify_value, moment_map

__all__ = [
    "NumericalError",
    "ToricVortexError",
    "TorusAction",
    "ValidationError",
    "classify_value",
    "moment_map",
]
