"""Unsupervised global action segmentation trained from activity labels only."""

from .config import RunConfig
from .dataio import DatasetManifest, SynthConfig, VideoRecord, downsample, generate_synthetic, load_dataset, preset, save_dataset, upsample_labels
from .decode import GlobalActionSegmenter, Segmentation, ordered_viterbi, segment_dataset, viterbi_decode
from .estimator import TriadicEmbedder
from .losses import LossConfig, activity_loss, combined_loss, cycle_back_regression, global_loss, gtcc_loss, video_loss
from .metrics import EvalSettings, MetricReport, evaluate, f1, hungarian_match, mof
from .model import BackboneConfig, DropContext, TemporalEncoder, embed_videos, load_checkpoint, save_checkpoint
from .pipeline import PipelineResult, run_pipeline
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "BackboneConfig",
    "DatasetManifest",
    "DropContext",
    "EvalSettings",
    "GlobalActionSegmenter",
    "LossConfig",
    "MetricReport",
    "RunConfig",
    "Segmentation",
    "SynthConfig",
    "TemporalEncoder",
    "TrainConfig",
    "TriadicEmbedder",
    "VideoRecord",
    "activity_loss",
    "combined_loss",
    "cycle_back_regression",
    "downsample",
    "embed_videos",
    "evaluate",
    "f1",
    "generate_synthetic",
    "global_loss",
    "gtcc_loss",
    "hungarian_match",
    "load_checkpoint",
    "load_dataset",
    "mof",
    "ordered_viterbi",
    "PipelineResult",
    "run_pipeline",
    "preset",
    "save_checkpoint",
    "segment_dataset",
    "train",
    "upsample_labels",
    "video_loss",
]
