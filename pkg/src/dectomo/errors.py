"""Exception types shared across the toolkit."""


class DectomoError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(DectomoError, ValueError):
    """Array shape incompatible with the geometry or with another operand."""


class TableParseError(DectomoError, ValueError):
    """A spectrum/basis table could not be parsed."""

    def __init__(self, path, line_no, message):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class TableRangeError(DectomoError, ValueError):
    """Table energies do not cover the requested energy grid."""


class InsufficientDataError(DectomoError, ValueError):
    """Not enough measurements for the requested operation."""


class ConditioningError(DectomoError, RuntimeError):
    """A linear system is rank deficient beyond the damping rescue."""

    def __init__(self, condition_number, message=None):
        self.condition_number = condition_number
        super().__init__(
            message or f"design matrix is rank deficient (cond={condition_number:.3e})"
        )


class DivergenceError(DectomoError, RuntimeError):
    """Non-finite values during an iterative solve (broken adjoint or bad weights)."""


class ConfigError(DectomoError, ValueError):
    """Invalid or missing experiment configuration."""


class DependencyError(DectomoError, RuntimeError):
    """An upstream pipeline artifact is missing."""

    def __init__(self, missing, message=None):
        self.missing = missing
        super().__init__(message or f"missing upstream artifact: {missing}")
