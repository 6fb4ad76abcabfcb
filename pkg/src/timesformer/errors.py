"""Exception types shared across the package."""


class TimesformerError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(TimesformerError, ValueError):
    """Tensor extents do not conform for the requested operation."""


class ConfigurationError(TimesformerError, ValueError):
    """A model or task configuration is invalid."""


class NumericError(TimesformerError, ArithmeticError):
    """A non-finite value reached an operation that forbids it."""


class ContractError(TimesformerError, RuntimeError):
    """An operation was called outside its documented contract."""


class TrainingError(TimesformerError, RuntimeError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
