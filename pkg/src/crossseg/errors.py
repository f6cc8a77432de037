"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes or sizes."""


class NumericsError(ArithmeticError):
    """A computation produced non-finite values."""


class ConfigError(ValueError):
    """A configuration document is malformed or inconsistent."""


class CheckpointError(ValueError):
    """A checkpoint file is malformed or does not match the model."""


class DatasetError(ValueError):
    """A dataset directory, sample file, or spec is invalid."""
