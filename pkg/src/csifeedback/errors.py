"""Exception hierarchy shared by all modules."""


class CSIFeedbackError(Exception):
    """Base class for all package errors."""


class ConfigError(CSIFeedbackError, ValueError):
    """Invalid configuration or shape mismatch at a module boundary."""


class GraphError(CSIFeedbackError, RuntimeError):
    """Misuse of the differentiation engine (e.g. backward without a forward)."""


class NumericalError(CSIFeedbackError, ArithmeticError):
    """A numerical guard fired: zero norm, singular matrix, NaN loss."""


class RankDeficiencyError(NumericalError):
    """Gram matrix too ill-conditioned to invert."""


class DecodeError(CSIFeedbackError):
    """A bitstream could not be decoded (bad header, checksum failure)."""


class CheckpointError(CSIFeedbackError):
    """Checkpoint file is corrupt, truncated or of an unsupported version."""


class DimensionMismatchError(CheckpointError, ConfigError):
    """Checkpoint dimensions do not match the requested system configuration."""
