"""Exception types shared across the package."""


class SubAdjacentError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SubAdjacentError, ValueError):
    pass


class ConfigError(SubAdjacentError, ValueError):
    pass


class InputError(SubAdjacentError, ValueError):
    pass


class SpecError(InputError):
    pass


class EvaluationError(SubAdjacentError, ValueError):
    pass


class ContractError(SubAdjacentError, RuntimeError):
    pass


class NumericalError(SubAdjacentError, ArithmeticError):
    """Raised when a loss or gradient turns non-finite.

    ``diagnostics`` carries whatever batch statistics the caller collected.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
