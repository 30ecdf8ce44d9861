"""Exception hierarchy shared by all modules."""


class DmdcError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(DmdcError, ValueError):
    pass


class RankDeficientError(DmdcError):
    """A truncation order retains a singular value below the rank tolerance.

    ``max_order`` is the largest order that would have passed.
    """

    def __init__(self, message, max_order=None):
        super().__init__(message)
        self.max_order = max_order


class NumericalFailureError(DmdcError):
    """Non-finite values or a failed factorization; ``step`` locates it when known."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class IllConditionedEigenbasisError(NumericalFailureError):
    pass


class AssumptionViolatedError(DmdcError):
    """The truth model is not Schur stable (spectral radius >= 1)."""


class CsvParseError(DmdcError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class DominanceViolationError(DmdcError):
    """An emitted bound trajectory falls below the actual error."""
