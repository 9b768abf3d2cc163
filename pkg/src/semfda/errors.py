"""Exception hierarchy shared across the package."""


class SemError(ValueError):
    """Base class for all semfda errors."""


class DomainError(SemError):
    """A key value or argument lies outside the admissible domain."""


class DegenerateConditioningError(SemError):
    """Conditioning on an age by which everyone has already died."""


class MonotonicityError(SemError):
    """A mortality curve decreases where it must be nondecreasing."""


class DataQualityError(SemError):
    """Input data are incomplete or inconsistent."""


class ParseError(SemError):
    """Malformed input file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ApplicabilityError(SemError):
    """The requested operation does not apply to this cohort."""
