"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Grids or feature maps with incompatible shapes."""


class ValidationError(ValueError):
    """A value violates a documented invariant (class codes, weights, probabilities)."""


class ParameterError(ValueError):
    """Generator or model parameters outside their valid ranges."""


class ConfigError(ValueError):
    """Inconsistent run configuration (unknown variant, missing checkpoint, ...)."""


class DataFormatError(RuntimeError):
    """On-disk dataset or checkpoint content that cannot be parsed."""


class EmptyMaskError(ValueError):
    """An operation that is undefined for empty masks received one."""


class TrainingDivergedError(RuntimeError):
    """Training aborted because the loss became non-finite."""
