"""Exception types shared across the package."""


class MadnavError(Exception):
    """Base class for package errors."""


class ConfigError(MadnavError, ValueError):
    """Invalid environment or run configuration."""


class UnsupportedEnvError(MadnavError, ValueError):
    """Operation requires a finite, enumerable environment."""


class DatasetParseError(MadnavError, ValueError):
    """Malformed dataset or checkpoint file."""


class EmptyBufferError(MadnavError, ValueError):
    """Sampling requested from an empty replay buffer."""


class ValidationError(MadnavError, ValueError):
    """Input violates a documented invariant."""
