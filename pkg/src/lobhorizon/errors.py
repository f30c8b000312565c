"""Exception types shared across the package."""


class LobHorizonError(Exception):
    """Base class for all package errors."""


class DimensionError(LobHorizonError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(LobHorizonError, FloatingPointError):
    """Non-finite values where finite ones are required."""


class ContractError(LobHorizonError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(LobHorizonError, ValueError):
    """Invalid configuration."""


class ParseError(LobHorizonError, ValueError):
    """Malformed input file. ``row`` is the 1-based data row when known."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class CheckpointError(LobHorizonError, IOError):
    """A checkpoint could not be read or written."""


class TrainingDivergence(LobHorizonError, ArithmeticError):
    """Loss became non-finite during training."""

    def __init__(self, message, batch_index):
        super().__init__(message)
        self.batch_index = batch_index
