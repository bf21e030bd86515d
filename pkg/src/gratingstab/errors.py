"""Exception hierarchy shared by every module of the package."""


class GratingError(Exception):
    """Base class for all package errors."""


class TruncationTooSmall(GratingError):
    """Mode truncation leaves fewer than two evanescent orders on a side."""


class ModeSetMismatch(GratingError):
    """Two traces were built on different mode sets."""


class ResonantMode(GratingError):
    """Some order satisfies |alpha_n| == k exactly."""


class InjectivityViolated(GratingError):
    """The flattening map is not a diffeomorphism for this profile."""


class ProfileTooSteep(GratingError):
    """No admissible cutoff height exists for the profile."""


class GridTooCoarse(GratingError):
    """The solver grid violates a resolution invariant."""


class SingularSystem(GratingError):
    """The discrete Helmholtz system could not be solved accurately."""


class NonPositiveEigenvalue(GratingError):
    """Quadrature produced a clearly negative covariance eigenvalue."""


class RejectionRateExceeded(GratingError):
    """Too many random surfaces failed admissibility screening."""


class InsufficientData(GratingError):
    """Not enough records to fit an exponent."""


class ParseError(GratingError):
    """Malformed or unknown content in a run configuration."""

    def __init__(self, line, message):
        self.line = line
        self.message = message
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class ValidationError(GratingError):
    """A configuration value violates a constraint."""

    def __init__(self, field, constraint):
        self.field = field
        self.constraint = constraint
        super().__init__(f"{field}: {constraint}")
