"""Error taxonomy shared across the package."""


class OpCoupleError(Exception):
    """Base class for all package errors."""


class ShapeError(OpCoupleError, ValueError):
    """Array dimensions incompatible with the operation."""


class ValidationError(OpCoupleError, ValueError):
    """Config or input file failed validation."""


class TrainingError(OpCoupleError, RuntimeError):
    """Training diverged or produced non-finite quantities."""


class SolverError(OpCoupleError, RuntimeError):
    """A PDE or particle solver failed."""


class SingularSystemError(SolverError):
    """Linear system singular or not solvable."""


class NewtonError(SolverError):
    """Newton iteration failed to converge within its budget."""


class InstabilityError(SolverError):
    """Explicit dynamics produced non-finite state."""


class DegenerateNeighborhoodError(SolverError):
    """Particle neighborhood too deficient to build a shape tensor."""


class OutsideMeshError(OpCoupleError, ValueError):
    """Query point lies outside the mesh."""


class UnconvergedError(OpCoupleError, RuntimeError):
    """Coupling loop hit its iteration budget without converging."""
