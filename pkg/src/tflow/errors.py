"""Exception and warning types raised by the library and the CLI."""


class TFlowError(Exception):
    """Base class for all library errors."""


class SingularTime(TFlowError):
    """A contraction function was evaluated at its singular point t = 0."""


class GridMismatch(TFlowError):
    """Two grid functions live on incompatible time grids."""


class SingularSolve(TFlowError):
    """The per-step linear system of the Dyson solver is numerically singular."""


class BadTemperature(TFlowError):
    """The starting temperature is not large compared to the model scales."""


class BadTemperatureWarning(UserWarning):
    """The starting temperature is only moderately large compared to the model scales."""


class NotApplicable(TFlowError):
    """The requested quantity only exists for a restricted parameter regime."""


class UnsupportedCouplings(TFlowError):
    """The formula is only available for uniform tunnel couplings."""


class StepRejected(TFlowError):
    """A temperature step exceeded the local error tolerance."""

    def __init__(self, message, error=float("nan")):
        super().__init__(message)
        self.error = error


class FlowStalled(TFlowError):
    """The adaptive stepper reached the minimal step without meeting the tolerance."""


class NonPhysical(UserWarning):
    """A propagator failed the complete-positivity or trace check."""


class NoUnitEigenvalue(TFlowError):
    """The propagator has no eigenvalue close enough to one."""


class ParseError(TFlowError):
    """Malformed configuration text."""

    def __init__(self, message, line=None, column=None):
        loc = "" if line is None else f" (line {line}, column {column})"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class ValidationError(TFlowError):
    """A configuration value is out of range or of the wrong type."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class FormatError(TFlowError):
    """A kernel dump file is corrupt or of an unknown version."""


class IoError(TFlowError):
    """A file could not be read or written."""
