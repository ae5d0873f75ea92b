"""Exception types shared across the package."""


class UsageError(ValueError):
    """Caller violated an argument contract (shape, range, finiteness)."""


class SplineFitError(ArithmeticError):
    """Least-squares spline fit could not be completed."""


class TrainingError(ArithmeticError):
    """Non-finite quantity encountered during optimization."""


class IdxFormatError(ValueError):
    """Malformed IDX-encoded image or label file."""


class DataError(ValueError):
    """Dataset cannot satisfy the requested construction."""


class ConsistencyError(RuntimeError):
    """A measurement violated an invariant it must satisfy by construction."""


class ConfigError(ValueError):
    """Invalid experiment configuration."""
