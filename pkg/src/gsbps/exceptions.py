"""Exception hierarchy. CLI exit codes are keyed off these classes."""


class GSBPSError(Exception):
    """Base class for all package errors."""


class DataError(GSBPSError, ValueError):
    """Input data failed validation (bad column, non-binary value, ...)."""


class NumericalError(GSBPSError, RuntimeError):
    """A numerical routine could not produce a valid answer."""


class CollinearDesignError(NumericalError):
    def __init__(self, message="collinear design"):
        super().__init__(message)


class SeparationError(NumericalError):
    def __init__(self, message="separation/unbounded"):
        super().__init__(message)


class ConvergenceError(NumericalError):
    """Raised when the iteration limit is hit before the tolerance."""

    def __init__(self, message="max iterations", diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
