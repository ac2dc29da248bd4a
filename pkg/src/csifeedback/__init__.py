"""Learned, entropy-coded CSI feedback for multi-user MISO downlink precoding."""

from .channel import SystemConfig, sample_channel
from .checkpoint import load_checkpoint, save_checkpoint
from .codec import build_symbol_table, measure_rate, range_decode, range_encode
from .errors import (CheckpointError, ConfigError, CSIFeedbackError, DecodeError,
                     DimensionMismatchError, GraphError, NumericalError, RankDeficiencyError)
from .feedback import estimate_overhead
from .objectives import mrt_precoder, sum_rate, zf_precoder
from .sweep import grid, run_sweep
from .system import FeedbackSystem
from .trainer import Trainer, TrainingConfig, evaluate, evaluate_baseline

__version__ = "0.1.0"

__all__ = [
    "SystemConfig", "sample_channel", "load_checkpoint", "save_checkpoint",
    "build_symbol_table", "measure_rate", "range_decode", "range_encode",
    "CheckpointError", "ConfigError", "CSIFeedbackError", "DecodeError",
    "DimensionMismatchError", "GraphError", "NumericalError", "RankDeficiencyError",
    "estimate_overhead", "mrt_precoder", "sum_rate", "zf_precoder", "grid", "run_sweep",
    "FeedbackSystem", "Trainer", "TrainingConfig", "evaluate", "evaluate_baseline",
]
