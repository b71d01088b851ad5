"""Exception hierarchy shared across the package."""


class MonosurfError(Exception):
    """Base class for all package errors."""


class DimensionError(MonosurfError):
    """Tensor/array shapes are incompatible with the requested operation."""


class ParameterError(MonosurfError):
    """A parameter value is outside its documented domain."""


class GraphError(MonosurfError):
    """Misuse of the differentiation graph (e.g. backward on a non-scalar)."""


class DegenerateDepthError(MonosurfError):
    """Perspective projection received a point at or behind the camera."""


class DegeneracyError(MonosurfError):
    """Point set too degenerate for the requested geometric operation."""


class ConfigError(MonosurfError):
    """Invalid run/scene/model configuration."""


class CheckpointError(MonosurfError):
    """Checkpoint file is corrupt or inconsistent with the expected model."""


class DatasetIOError(MonosurfError):
    """Dataset container is corrupt, truncated, or of an unknown version."""


class TrainingDivergedError(MonosurfError):
    """Loss became non-finite during optimisation."""
