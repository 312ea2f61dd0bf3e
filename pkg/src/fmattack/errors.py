"""Exception hierarchy shared by all fmattack modules."""


class FmattackError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(FmattackError):
    """Two arrays that must be conformant are not."""

    def __init__(self, what, shape_a, shape_b):
        super().__init__(f"{what}: shapes {tuple(shape_a)} and {tuple(shape_b)} do not conform")
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)


class InvalidLabelError(FmattackError):
    """A class label lies outside [0, num_classes)."""


class UnreachableNodeError(FmattackError):
    """A gradient was requested for a node with no path to the target."""


class TapNotFoundError(FmattackError):
    """A feature tap names a layer that does not exist in the model."""

    def __init__(self, tap, model_name, available):
        super().__init__(
            f"tap {tap!r} not found in model {model_name!r}; available: {sorted(available)}"
        )
        self.tap = tap


class NonFiniteGradientError(FmattackError):
    """A NaN or Inf appeared in a gradient during an attack run."""


class WeightFormatError(FmattackError):
    """Base class for weight-file parsing failures."""


class BadMagicError(WeightFormatError):
    pass


class VersionMismatchError(WeightFormatError):
    pass


class TruncatedFileError(WeightFormatError):
    pass


class TrailingDataError(WeightFormatError):
    pass


class WeightShapeError(WeightFormatError):
    """Stored tensor shapes do not match the declared architecture."""


class DatasetFormatError(FmattackError):
    """An IDX dataset file is malformed."""


class ConfigError(FmattackError):
    """An experiment config file is invalid."""
