"""Cross-scanning state-space segmentation network, self-contained on numpy."""

from .blocks import CrossScanNet, load_model, save_model
from .config import (AugmentConfig, CliConfig, DatasetSpec, ModelConfig,
                     TrainConfig, desk_config, load_config)
from .data import Sample, augment, load_split, synth_generate
from .errors import (CheckpointError, ConfigError, DatasetError, NumericsError,
                     ShapeError)
from .estimator import CrossScanSegmenter
from .metrics import (MetricsReport, dice_iou, e_measure, evaluate_dataset,
                      evaluate_pair, mae, s_measure, weighted_fbeta)
from .selfcheck import run_selfcheck
from .train import adamw_step, lr_at, seg_loss, train_loop

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "CheckpointError", "CliConfig", "ConfigError",
    "CrossScanNet", "CrossScanSegmenter", "DatasetError", "DatasetSpec",
    "MetricsReport", "ModelConfig", "NumericsError", "Sample", "ShapeError",
    "TrainConfig", "adamw_step", "augment", "desk_config", "dice_iou",
    "e_measure", "evaluate_dataset", "evaluate_pair", "load_config",
    "load_model", "load_split", "lr_at", "mae", "run_selfcheck", "s_measure",
    "save_model", "seg_loss", "synth_generate", "train_loop", "weighted_fbeta",
]
