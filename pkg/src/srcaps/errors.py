"""Exception hierarchy shared across the package."""


class SRCapsError(Exception):
    """Base class for every error raised by srcaps."""


class ConfigurationError(SRCapsError, ValueError):
    """Invalid hyperparameters, shapes or option names."""


class NumericError(SRCapsError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DegenerateDirectionError(NumericError):
    """A weight-normalized kernel has a zero direction for some output channel."""


class UsageError(SRCapsError, ValueError):
    """Operation called with inputs that violate its preconditions."""


class ParameterError(SRCapsError, ValueError):
    """Loss or metric parameter outside its admissible range."""


class CheckpointError(SRCapsError):
    """Malformed, truncated or incompatible checkpoint file."""
