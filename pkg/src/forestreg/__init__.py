"""Semisupervised contrastive dense regression for forest height mapping."""

from .anchors import AnchorSet, sample_anchors
from .baseline import MlrModel, fit_mlr, predict_mlr
from .bsr import RasterStack, read_raster, write_raster
from .checkpoint import load_checkpoint, save_checkpoint
from .config import DataConfig, RunConfig
from .losses import LossConfig, LossReport, cpr_loss, ctrl_loss, hybrid_loss
from .metrics import MetricReport, pixel_metrics, stand_metrics
from .network import Branch, DualBranchModel, extract_inference_model
from .patches import DatasetSplit, PatchSample, augment, filter_and_split, mark_unlabeled
from .scenes import SceneConfig, generate_height_field, render_bands, scene_to_patches
from .similarity import SimilarityMatrix, build_similarity, cosine_matrix, label_similarity
from .training import TrainConfig, anchor_sweep, predict, train

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "Branch",
    "DataConfig",
    "DatasetSplit",
    "DualBranchModel",
    "LossConfig",
    "LossReport",
    "MetricReport",
    "MlrModel",
    "PatchSample",
    "RasterStack",
    "RunConfig",
    "SceneConfig",
    "SimilarityMatrix",
    "TrainConfig",
    "anchor_sweep",
    "augment",
    "build_similarity",
    "cosine_matrix",
    "cpr_loss",
    "ctrl_loss",
    "extract_inference_model",
    "filter_and_split",
    "fit_mlr",
    "generate_height_field",
    "hybrid_loss",
    "label_similarity",
    "load_checkpoint",
    "mark_unlabeled",
    "pixel_metrics",
    "predict",
    "predict_mlr",
    "read_raster",
    "render_bands",
    "sample_anchors",
    "save_checkpoint",
    "scene_to_patches",
    "stand_metrics",
    "train",
    "write_raster",
]
