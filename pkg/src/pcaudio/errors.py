"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with an operation or a model's fixed input size."""


class ParameterError(ValueError):
    """An argument is outside its valid range."""


class GradientError(RuntimeError):
    """Misuse of the differentiation machinery (consumed tape, stale gradients)."""


class EmptyCloudError(ValueError):
    """A point cloud (or an attention row) has no valid points."""


class EmptyClipError(ValueError):
    """Audio clip is entirely below the silence threshold."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


class UnsupportedInput(ValueError):
    """Input representation the fixed-size baseline cannot accept (e.g. a larger window)."""
