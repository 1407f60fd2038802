"""Exception hierarchy shared by every cstg module."""


class CstgError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CstgError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(CstgError, ValueError):
    """A configuration value is missing or outside its allowed range."""


class DataError(CstgError, ValueError):
    """Input data violates a data contract (non-finite, bad labels, ...)."""


class FormatError(CstgError, ValueError):
    """A binary or text file does not follow its declared format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(CstgError, RuntimeError):
    """Training diverged (non-finite risk)."""

    def __init__(self, message, epoch=None, risk=None):
        super().__init__(message)
        self.epoch = epoch
        self.risk = risk


class UndefinedMetricError(CstgError, ValueError):
    """A metric is undefined for the given targets (e.g. zero variance)."""
