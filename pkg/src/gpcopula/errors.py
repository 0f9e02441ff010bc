"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class GPCopulaError(Exception):
    exit_code = 1


class ConfigError(GPCopulaError, ValueError):
    exit_code = 2


class DataError(GPCopulaError, ValueError):
    exit_code = 3


class NumericalError(GPCopulaError, ArithmeticError):
    exit_code = 4


class CholeskyError(NumericalError):
    """Raised when a factorization meets a non-positive pivot."""

    def __init__(self, pivot, value=None, context=""):
        self.pivot = pivot
        self.value = value
        self.context = context
        msg = f"Cholesky failed at pivot {pivot}"
        if value is not None:
            msg += f" (value {value:.3e})"
        if context:
            msg += f" [{context}]"
        super().__init__(msg)
