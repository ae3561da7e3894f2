"""Entropy-gated multimodal fusion with curriculum masking.

A small float64 research stack: a replayable reverse-mode tape, a gated
mixture fusion model that renormalizes over observed modalities, an
entropy/consistency composite loss, instance-adaptive entropy weighting
from predictive variance, curriculum mask schedules with an adaptive
teacher, and a reproducible training/evaluation harness.
"""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .curriculum import (MaskDistribution, Schedules, acm_distribution,
                         candidate_family, sample_mask, schedule_lambda,
                         schedule_pi)
from .data import (MultimodalBatch, SyntheticSpec, apply_mask, bernoulli_mask,
                   generate, load_dataset, save_dataset)
from .losses import (LossBreakdown, cec_loss, cec_pairs, composite_loss,
                     entropy_penalty, subset_confidences, task_loss)
from .metrics import (CalibrationReport, InversionAudit, audit_confidences,
                      ece, entropy_confidence_export, inversion_audit,
                      map_at_1, per_class_ece, top1_accuracy)
from .model import (ForwardOutput, FusionConfig, FusionModel, forward,
                    load_checkpoint, predict_subset, save_checkpoint)
from .optim import AdamW, AdamWState, adamw_step, cosine_lr
from .rng import stream
from .subsets import SubsetMask, nonempty_subsets, subset_lattice
from .tensor import Tape, Tensor, entropy, grad_check, softplus
from .trainer import (DivergenceError, RunResult, Switches, TrainConfig,
                      apply_ablation, evaluate_under_dropout, fit_temperature,
                      train)
from .uncertainty import (LambdaConfig, calibrate_vmax, ensemble_variance,
                          lambda_of, lambda_upper, mc_variance, with_vmax)

__version__ = "0.1.0"

__all__ = [
    "AdamW", "AdamWState", "CalibrationReport", "ConfigError",
    "DivergenceError", "ExperimentConfig", "ForwardOutput", "FusionConfig",
    "FusionModel", "InversionAudit", "LambdaConfig", "LossBreakdown",
    "MaskDistribution", "MultimodalBatch", "RunResult", "Schedules",
    "SubsetMask", "Switches", "SyntheticSpec", "Tape", "Tensor",
    "TrainConfig", "acm_distribution", "adamw_step", "apply_ablation",
    "apply_mask", "audit_confidences", "bernoulli_mask", "calibrate_vmax",
    "candidate_family",
    "cec_loss", "cec_pairs", "composite_loss", "cosine_lr", "ece",
    "ensemble_variance", "entropy", "entropy_confidence_export",
    "entropy_penalty", "evaluate_under_dropout", "fit_temperature",
    "forward", "generate", "grad_check", "inversion_audit", "lambda_of",
    "lambda_upper", "load_checkpoint", "load_config", "load_dataset",
    "map_at_1", "mc_variance", "nonempty_subsets", "parse_config",
    "per_class_ece", "predict_subset", "sample_mask", "save_checkpoint",
    "save_dataset", "schedule_lambda", "schedule_pi", "softplus", "stream",
    "subset_confidences", "subset_lattice", "task_loss", "top1_accuracy",
    "train", "with_vmax",
]
