"""Bitemporal change detection: model, training, data tooling, CLI."""

from .config import (AblationConfig, ConfigError, DataConfig, EncoderConfig,
                     EsaConfig, ModelConfig, MsfConfig, RunConfig, SynthConfig,
                     TrainConfig, apply_ablation, desk_preset, full_preset,
                     load_run_config, run_config_from_dict, save_run_config)
from .backbone import Encoder, FeaturePyramid, build_encoder
from .csa import CrossStageAggregation, CsaBranch, DifferencePyramid, temporal_difference
from .decoder import EfficientAttention, MultiScaleFusion, UShapeDecoder
from .model import ChangeNet, PredictionSet, build_model
from .losses import LossReport, bce_loss, dice_loss, total_loss
from .metrics import (ConfusionCounts, MetricReport, compute_metrics,
                      evaluate_pair, format_report)
from .data import BitemporalPair, ChangeDataset, augment, collate, temporal_exchange
from .synth import generate_synthetic
from .training import (Checkpoint, DivergenceError, evaluate_dataset,
                       load_model_from_checkpoint, poly_lr, train_loop)
from .complexity import count_parameters, estimate_flops, measure_attention_macs
from .estimator import ChangeDetector
from .validation import DimensionError, ShapeMismatchError

__version__ = "0.1.0"

__all__ = [
    "AblationConfig", "BitemporalPair", "ChangeDataset", "ChangeDetector",
    "ChangeNet", "Checkpoint", "ConfigError", "ConfusionCounts",
    "CrossStageAggregation", "CsaBranch", "DataConfig", "DifferencePyramid",
    "DimensionError", "DivergenceError", "EfficientAttention", "Encoder",
    "EncoderConfig", "EsaConfig", "FeaturePyramid", "LossReport",
    "MetricReport", "ModelConfig", "MsfConfig", "MultiScaleFusion",
    "PredictionSet", "RunConfig", "ShapeMismatchError", "SynthConfig",
    "TrainConfig", "UShapeDecoder", "apply_ablation", "augment", "bce_loss",
    "build_encoder", "build_model", "collate", "compute_metrics",
    "count_parameters", "desk_preset", "dice_loss", "estimate_flops",
    "evaluate_dataset", "evaluate_pair", "format_report", "full_preset",
    "generate_synthetic", "load_model_from_checkpoint", "load_run_config",
    "measure_attention_macs", "poly_lr", "run_config_from_dict",
    "save_run_config", "temporal_difference", "temporal_exchange",
    "total_loss", "train_loop", "__version__",
]
