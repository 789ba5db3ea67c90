"""Exception types shared across the package."""


class AcgeomError(Exception):
    """Base class for all errors raised by acgeom."""


class DegenerateSampleError(AcgeomError):
    """Minimal sample does not determine the model (rank deficiency, collinearity, ...)."""


class DegeneratePointError(AcgeomError):
    """Point maps to infinity under a projective transform."""


class NoninvertibleAffinityError(AcgeomError):
    """Local affinity matrix is singular."""


class DecompositionAmbiguousError(AcgeomError):
    """No relative-pose candidate places a majority of points in front of both cameras."""


class InsufficientOverlapError(AcgeomError):
    """Patches do not overlap on a large enough square in the reference frame."""


class UntexturedPatchError(AcgeomError):
    """Normal matrix of the intensity matching problem is ill conditioned."""


class WindowTooSmallError(AcgeomError):
    """Redundancy of the matching problem is not positive."""


class CriticalConfigurationError(AcgeomError):
    """Constraint Jacobian is singular; covariance cannot be propagated."""


class InconsistentManifoldError(AcgeomError):
    """Empirical covariance has significant mass outside the analytic column space."""


class InsufficientDataError(AcgeomError):
    """Not enough data to fit or estimate."""


class InvalidPolynomialError(AcgeomError):
    """Polynomial has no usable coefficients (all zero)."""


class EmptyVisibleAreaError(AcgeomError):
    """No pixel of the first image is visible in the second one."""


class ParseError(AcgeomError):
    """A data file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
