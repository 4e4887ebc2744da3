"""Exception hierarchy shared across the package."""


class MdmlpError(Exception):
    """Base class for all package errors."""


class ConfigError(MdmlpError, ValueError):
    """Invalid configuration, geometry or argument value."""


class ShapeError(MdmlpError, ValueError):
    """Operand extents do not agree."""


class UsageError(MdmlpError, RuntimeError):
    """API used out of order (e.g. recording without a tape)."""


class DataError(MdmlpError, OSError):
    """Dataset file missing, truncated or malformed."""


class CheckpointError(MdmlpError, OSError):
    """Checkpoint file unreadable, corrupted or inconsistent with the model."""


class NumericError(MdmlpError, ArithmeticError):
    """Non-finite values reached the optimizer."""
