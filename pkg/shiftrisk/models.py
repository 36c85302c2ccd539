"""Records passed between the sampler, estimators and training loop."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


@dataclass
class AugmentedPair:
    """Clean sample, its label and one augmented copy drawn from the CAN."""

    x: np.ndarray
    y: int
    x_prime: np.ndarray
    theta: np.ndarray
    attempts: int
    index: int = 0
    copy: int = 0
    accepted: bool = True


@dataclass
class GradientReport:
    """Loss value and gradient aligned with the flat parameter vector."""

    loss: float
    grad: np.ndarray
    finite_diff_max_rel_err: float | None = None


@dataclass
class RiskDecomposition:
    """Shifted risk split into clean risk plus the consistency gap."""

    shifted_risk: float
    clean_risk: float
    gap: float
    residual: float


@dataclass
class SandwichReport:
    """Bounds on the log-ratio of the softmax normalisers of x and x'."""

    lhs: float
    lower: float
    upper: float
    alpha_star: float
    beta_star: float
    literal_lower: float = 0.0
    linear_term: float = 0.0

    @property
    def holds(self) -> bool:
        """Return True when lower <= lhs <= upper."""
        return self.lower <= self.lhs <= self.upper

    @property
    def literal_holds(self) -> bool:
        """Return True when the max{beta*, 1} lower bound holds as well."""
        return self.literal_lower <= self.lhs


@dataclass
class VarianceScanRow:
    """Empirical variance of the gap estimator for one (N, M) cell."""

    N: int
    M: int
    trials: int
    empirical_variance: float
    predicted_variance: float = float("nan")
    mean_gap: float = float("nan")


@dataclass
class FeatureDiagnostic:
    """Per-feature softmax entropy and head-weight spread."""

    index: int
    mean_entropy: float
    weight_spread: float
    major: bool


@dataclass
class EpochRow:
    """Metrics recorded at the end of one training epoch."""

    epoch: int
    train_loss: float
    clean_risk: float
    shifted_risk: float
    gap: float
    train_acc: float
    val_acc: float
    val_clean_risk: float
    lr: float
    major_features: int = 0


@dataclass
class RunRecord:
    """Per-epoch metrics, config snapshot and final test metrics of a run."""

    config: dict[str, Any]
    rows: list[EpochRow] = field(default_factory=list)
    test: dict[str, float] = field(default_factory=dict)
    best_epoch: int = -1
    step_losses: list[float] = field(default_factory=list)
    fallbacks: int = 0
