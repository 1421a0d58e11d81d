"""Operator-surrogate coupling toolkit for multiscale PDE problems.

Trains operator surrogates for expensive subdomain models and couples them
iteratively with conventional solvers through interface exchange with
relaxation. Everything is float64 end to end.
"""

__version__ = "0.1.0"

from .errors import (
    OpCoupleError,
    ShapeError,
    ValidationError,
    TrainingError,
    SolverError,
    SingularSystemError,
    NewtonError,
    InstabilityError,
    DegenerateNeighborhoodError,
    OutsideMeshError,
    UnconvergedError,
)

__all__ = [
    "__version__",
    "OpCoupleError",
    "ShapeError",
    "ValidationError",
    "TrainingError",
    "SolverError",
    "SingularSystemError",
    "NewtonError",
    "InstabilityError",
    "DegenerateNeighborhoodError",
    "OutsideMeshError",
    "UnconvergedError",
]
