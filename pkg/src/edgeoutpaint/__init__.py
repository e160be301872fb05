"""Edge-guided image outpainting: edge inference, edge-conditioned content
generation, a frozen semantic embedding loss, and the evaluation harness."""

from .data import (DatasetSplit, Sample, apply_mask, canny_edges, load_image, make_right_mask,
                   split_dataset, to_grayscale)
from .errors import (CheckpointError, ConfigError, IngestError, MaskError, NumericsError,
                     ProvenanceError, ShapeError)
from .evaluation import MetricsReport, ablation_table, evaluate_dataset, mae, psnr, ssim
from .losses import LossConfig, semantic_embedding_loss
from .networks import ModelBundle, NetworkConfig
from .training import StageConfig, TrainReport, compose, load_checkpoint, outpaint, save_checkpoint, train_stage

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit", "Sample", "apply_mask", "canny_edges", "load_image", "make_right_mask", "split_dataset",
    "to_grayscale", "CheckpointError", "ConfigError", "IngestError", "MaskError", "NumericsError",
    "ProvenanceError", "ShapeError", "MetricsReport", "ablation_table", "evaluate_dataset", "mae", "psnr",
    "ssim", "LossConfig", "semantic_embedding_loss", "ModelBundle", "NetworkConfig", "StageConfig",
    "TrainReport", "compose", "load_checkpoint", "outpaint", "save_checkpoint", "train_stage",
]
