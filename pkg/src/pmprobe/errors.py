"""Exception and warning types."""


class PmProbeError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(PmProbeError, ValueError):
    """An input is outside the domain of the operation."""


class UnphysicalStateError(ValidationError):
    """A covariance matrix violates the uncertainty relation."""


class SingularMatrixError(PmProbeError, ArithmeticError):
    """A matrix that must be inverted is singular to working precision.

    ``det`` carries the offending determinant so callers can decide whether
    the state is at the pure limit or the parameters are degenerate.
    """

    def __init__(self, message, det=None):
        super().__init__(message)
        self.det = det


class QuadratureError(PmProbeError, RuntimeError):
    """A numerical integral did not converge under grid refinement."""


class PurityFallbackWarning(UserWarning):
    """A QFIM element was evaluated on a slightly inflated covariance because
    the state is pure to working precision; the value is approximate."""
