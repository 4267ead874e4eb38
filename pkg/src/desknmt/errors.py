"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ``ConfigError`` -> 1, ``DataError`` -> 2,
``TrainingError`` -> 3.
"""


class DeskNMTError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(DeskNMTError, ValueError):
    """Invalid configuration value or combination."""


class DataError(DeskNMTError):
    """Malformed, misaligned, or insufficient input data."""


class AlignmentError(DataError):
    """Source and target files disagree in line count."""


class QuotaError(DataError):
    """Synthetic pool too small for the requested batch level."""


class ArtifactMismatchError(DataError):
    """Vocabulary/merge files do not match the checkpoint fingerprint."""


class IntegrityError(DataError):
    """Checkpoint file failed its checksum or header validation."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class TrainingError(DeskNMTError):
    """Non-finite loss or gradients during training."""
