"""Colonoscopy landmark classification: preprocessing, distribution-matched sampling,
a numpy Vision Transformer trained with SAM, and evaluation tools."""

__version__ = "0.1.0"

from .dataset import LABELS, FrameRecord, Label, Manifest, Split, load_manifest, save_manifest
from .evaluation import confusion, export_embeddings, metrics, project_embeddings_2d
from .imaging import PreprocessConfig, preprocess
from .model import ViTConfig, ViTModel, forward, init_model, predict
from .sampling import SamplingPlan, compute_inclusion_probs, sample_epoch
from .training import TrainConfig, train

__all__ = [
    "LABELS", "FrameRecord", "Label", "Manifest", "Split", "load_manifest", "save_manifest",
    "confusion", "export_embeddings", "metrics", "project_embeddings_2d",
    "PreprocessConfig", "preprocess",
    "ViTConfig", "ViTModel", "forward", "init_model", "predict",
    "SamplingPlan", "compute_inclusion_probs", "sample_epoch",
    "TrainConfig", "train",
]
