"""Exception hierarchy shared by every subsystem."""


class SSformerError(Exception):
    """Base class for all package errors."""


class DimensionError(SSformerError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(SSformerError, ValueError):
    """A precondition of an operation was violated."""


class NumericError(SSformerError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""


class ConfigError(SSformerError, ValueError):
    """Invalid or mismatched configuration."""


class DataError(SSformerError, ValueError):
    """Malformed input data (labels out of range, bad files, ...)."""


class FormatError(DataError):
    """A Netpbm file could not be parsed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(NumericError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration, message="loss became non-finite"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration
