"""Exception hierarchy shared by all stressnav modules."""


class StressNavError(Exception):
    """Base class for every error raised by this package."""


class InvalidGeometryError(StressNavError, ValueError):
    """Geometry violates a precondition (robot outside the vessel, bad sizes)."""


class GeometryViolation(InvalidGeometryError):
    """The robot touched or crossed a wall while being advanced in time."""


class ResolutionError(StressNavError):
    """The discretisation cannot resolve the geometry (gap too small)."""


class SolverError(StressNavError):
    """The linear system could not be solved to the requested tolerance."""


class DegenerateInputError(StressNavError, ValueError):
    """Input carries no usable signal (e.g. an all-zero stress reading)."""


class ModelCompatibilityError(StressNavError, ValueError):
    """A fitted model does not match the features it is applied to."""


class FitError(StressNavError):
    """A regression or decomposition failed (non-convergence, rank deficiency)."""


class InconsistentEstimateError(StressNavError, ValueError):
    """Estimates contradict each other (e.g. estimated diameter no larger than the robot)."""
