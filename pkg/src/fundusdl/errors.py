"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
ArtifactError -> 3.
"""


class FundusDLError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FundusDLError):
    """Invalid configuration: unknown option, bad hyperparameter, bad layout."""


class DimensionError(FundusDLError):
    """Shape mismatch between tensors, kernels, or graph layers."""


class DataError(FundusDLError):
    """Dataset problems: missing classes, empty partitions, unreadable corpora."""


class MissingGradientError(FundusDLError):
    """An optimizer step found a trainable parameter without a gradient."""


class TrainingDivergedError(FundusDLError):
    """Loss became NaN/Inf during training; aborted rather than continuing."""


class ArtifactError(FundusDLError):
    """Base class for model-artifact file errors."""


class ArtifactVersionError(ArtifactError):
    """Bad magic bytes or unsupported format version."""


class ArtifactChecksumError(ArtifactError):
    """Trailing CRC-32 does not match the file contents."""


class ArtifactTruncatedError(ArtifactError):
    """File ended before the declared contents were read."""
