"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value or file is invalid."""


class DataError(ValueError):
    """Input data (labels, images, grids) violates a precondition."""


class TapeError(RuntimeError):
    """An operation tape was used incorrectly (e.g. consumed twice)."""


class SingularSystemError(ValueError):
    """A linear system has no unique solution."""
