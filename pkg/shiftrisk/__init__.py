"""Library to study training on shifted populations from data augmentation."""
from __future__ import annotations

from .augment import (
    AdditiveShift,
    AugmentationOp,
    ColorAdjust,
    CompositeOp,
    DiscreteFlip,
    ParamSpace,
    Rotation2D,
    Scale,
    compose,
)
from .cansample import (
    AcceptanceExhaustedError,
    ConceptionOracle,
    GridPrior,
    TruncatedGaussianPrior,
    UniformBoxPrior,
    batch_augment,
    conditional_density,
    sample_can,
)
from .classifier import NLLTerms, ProbModel, check_gradient, grad_loss, log_q
from .data import Dataset, SplitSpec, gen_blobs, gen_rings, load_idx, longtail_subsample, split
from .models import AugmentedPair, RiskDecomposition, RunRecord, SandwichReport
from .risk import (
    clean_risk,
    decompose,
    feature_diagnostics,
    gap_estimator,
    sandwich_bounds,
    shifted_risk,
    variance_scan,
)
from .train import TrainConfig, loss_ours, loss_standard, lr_at, train

__all__ = [
    "AcceptanceExhaustedError",
    "AdditiveShift",
    "AugmentationOp",
    "AugmentedPair",
    "ColorAdjust",
    "CompositeOp",
    "ConceptionOracle",
    "Dataset",
    "DiscreteFlip",
    "GridPrior",
    "NLLTerms",
    "ParamSpace",
    "ProbModel",
    "RiskDecomposition",
    "Rotation2D",
    "RunRecord",
    "SandwichReport",
    "Scale",
    "SplitSpec",
    "TrainConfig",
    "TruncatedGaussianPrior",
    "UniformBoxPrior",
    "batch_augment",
    "check_gradient",
    "clean_risk",
    "compose",
    "conditional_density",
    "decompose",
    "feature_diagnostics",
    "gap_estimator",
    "gen_blobs",
    "gen_rings",
    "grad_loss",
    "load_idx",
    "log_q",
    "longtail_subsample",
    "loss_ours",
    "loss_standard",
    "lr_at",
    "sample_can",
    "sandwich_bounds",
    "shifted_risk",
    "split",
    "train",
    "variance_scan",
]
