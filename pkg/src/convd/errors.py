"""Exception hierarchy. The CLI maps these onto stable exit codes."""


class ConvDError(Exception):
    """Base class for all package errors."""


class DimensionError(ConvDError):
    """Shapes or sizes incompatible with the requested operation."""


class ConfigError(ConvDError):
    """Invalid or inconsistent configuration."""


class DataError(ConvDError):
    """Malformed input data or unknown vocabulary symbols."""


class StateError(ConvDError):
    """Operation applied to an object in the wrong state."""


class NumericError(ConvDError):
    """Non-finite values where finite ones are required."""


class DegenerateBatchError(ConvDError):
    """Batch statistics requested for a batch too small to have any."""


class GenerationError(ConvDError):
    """Synthetic dataset parameters cannot populate all splits."""


class CheckpointError(ConvDError):
    """Unsupported, truncated, or corrupt checkpoint file."""
