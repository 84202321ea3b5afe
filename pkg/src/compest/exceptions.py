"""Exception hierarchy shared by every module in the package."""


class CompestError(Exception):
    """Base class for all errors raised by compest."""


class ValidationError(CompestError, ValueError):
    """Input data violates a structural or range requirement."""


class ConfigError(CompestError, ValueError):
    """Solver, projection or tuning parameters are inconsistent."""


class DomainError(CompestError, ValueError):
    """A quantity is undefined at the given input (log of zero, empty row)."""


class NumericalError(CompestError, ArithmeticError):
    """SVD failure or a non-finite objective during optimization."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class GenerationError(CompestError, RuntimeError):
    """Synthetic data could not be generated within the attempt budget."""
