"""Exception hierarchy shared by all modules."""


class ToricVortexError(Exception):
    """Base class for library errors."""


class ValidationError(ToricVortexError, ValueError):
    """Input violates a documented precondition (CLI exit code 2)."""


class NumericalError(ToricVortexError, ArithmeticError):
    """A numerical procedure failed (CLI exit code 3)."""


class DimensionMismatch(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class EnumerationCapExceeded(ValidationError):
    pass


class NonRationalInput(ValidationError):
    pass


class ProportionalityViolated(ValidationError):
    pass


class InvalidOptions(ValidationError):
    pass


class NotOnLevelSet(ValidationError):
    pass


class NonMeanZeroData(ValidationError):
    pass


class RegularityViolated(ValidationError):
    pass


class NotProper(ValidationError):
    pass


class ProjectionDiverged(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass
