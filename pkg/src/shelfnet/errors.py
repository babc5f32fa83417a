"""Exception types shared across the workbench."""


class ShelfError(Exception):
    """Base class for all workbench errors."""


class ShapeError(ShelfError):
    """Tensor or graph shapes are inconsistent."""


class ConfigError(ShelfError):
    """An operation or experiment was configured with invalid settings."""


class InputError(ShelfError):
    """Runtime data (labels, input sizes, ids) is out of contract."""


class GraphError(ShelfError):
    """A block graph violates a structural invariant."""


class CheckpointError(ShelfError):
    """A checkpoint file is corrupt, truncated or incompatible."""


class TrainingDiverged(ShelfError):
    """Training produced a non-finite loss."""
