"""Standard augmented training and lambda-weighted decomposed training.

Both strategies minimise an NLLTerms objective with momentum SGD. The
decomposed objective is the clean cross-entropy plus lambda times the
consistency gap, which for cross-entropy equals
(1 - lambda) * clean CE + lambda * shifted CE; at lambda = 1 its terms are
exactly those of the standard objective.
"""
from __future__ import annotations

from collections.abc import Sequence
import csv
from dataclasses import asdict, dataclass, field
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

from .augment import AugmentationOp
from .cansample import ConceptionOracle, ParamPrior, batch_augment
from .classifier import NLLTerms, ProbModel, save_checkpoint
from .const import (
    DEFAULT_BASE_LR,
    DEFAULT_BATCH_SIZE,
    DEFAULT_COPIES,
    DEFAULT_EPOCHS,
    DEFAULT_LAMBDA,
    DEFAULT_MAX_ATTEMPTS,
    DEFAULT_MOMENTUM,
    DEFAULT_STEP_FACTOR,
    DEFAULT_WARMUP_EPOCHS,
    DEFAULT_WEIGHT_DECAY,
)
from .data import Dataset
from .models import AugmentedPair, EpochRow, RunRecord
from .risk import clean_risk, decompose, feature_diagnostics, group_pairs, shifted_risk

_LOGGER = logging.getLogger(__name__)

STRATEGIES = ("standard", "ours")
SCHEDULES = ("cosine", "step")


class InvalidTrainConfigError(ValueError):
    """Raised when a training configuration violates its constraints."""


class NonFiniteLossError(ArithmeticError):
    """Raised when a training step produces a NaN or infinite loss or gradient."""

    def __init__(self, step: int, loss: float) -> None:
        """Record the offending step."""
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step = step
        self.loss = loss


@dataclass
class TrainConfig:
    """Hyper-parameters of one training run."""

    strategy: str = "ours"
    lam: float = DEFAULT_LAMBDA
    batch_size: int = DEFAULT_BATCH_SIZE
    epochs: int = DEFAULT_EPOCHS
    base_lr: float = DEFAULT_BASE_LR
    momentum: float = DEFAULT_MOMENTUM
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    warmup_epochs: int = DEFAULT_WARMUP_EPOCHS
    schedule: str = "cosine"
    milestones: list[int] = field(default_factory=list)
    step_factor: float = DEFAULT_STEP_FACTOR
    seed: int = 0
    copies: int = DEFAULT_COPIES
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    fallback: bool = True
    double_batch: bool = False

    def __post_init__(self) -> None:
        """Validate the configuration."""
        problems = []
        if self.strategy not in STRATEGIES:
            problems.append(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not 0.0 <= self.lam <= 1.0:
            problems.append(f"lam must lie in [0, 1], got {self.lam}")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1, got {self.epochs}")
        if self.base_lr < 0.0:
            problems.append(f"base_lr must be >= 0, got {self.base_lr}")
        if not 0.0 <= self.momentum < 1.0:
            problems.append(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0.0:
            problems.append(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            problems.append(f"warmup_epochs must lie in [0, epochs], got {self.warmup_epochs}")
        if self.schedule not in SCHEDULES:
            problems.append(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if not 0.0 < self.step_factor <= 1.0:
            problems.append(f"step_factor must lie in (0, 1], got {self.step_factor}")
        if self.copies < 1:
            problems.append(f"copies must be >= 1, got {self.copies}")
        if self.max_attempts < 1:
            problems.append(f"max_attempts must be >= 1, got {self.max_attempts}")
        if problems:
            raise InvalidTrainConfigError("; ".join(problems))

    @property
    def effective_batch_size(self) -> int:
        """Return the batch size actually used, doubled for the 2x baseline."""
        return 2 * self.batch_size if self.double_batch else self.batch_size


def objective_standard(pairs: Sequence[AugmentedPair]) -> NLLTerms:
    """Return the mean NLL over the augmented copies."""
    groups = group_pairs(pairs)
    n, m = groups.shape
    return NLLTerms.mean(groups.x_prime.reshape(n * m, -1), np.repeat(groups.y, m))


def objective_ours(pairs: Sequence[AugmentedPair], lam: float) -> NLLTerms:
    """Return clean CE plus lam times the gap, as weighted NLL terms."""
    groups = group_pairs(pairs)
    n, m = groups.shape
    clean = NLLTerms.mean(groups.x, groups.y, scale=1.0 - lam)
    augmented = NLLTerms.mean(
        groups.x_prime.reshape(n * m, -1),
        np.repeat(groups.y, m),
        scale=lam,
    )
    return NLLTerms.concat([clean, augmented])


def build_objective(config: TrainConfig, pairs: Sequence[AugmentedPair]) -> NLLTerms:
    """Return the training objective selected by ``config.strategy``."""
    if config.strategy == "standard":
        return objective_standard(pairs)
    return objective_ours(pairs, config.lam)


def loss_standard(model: ProbModel, pairs: Sequence[AugmentedPair]) -> float:
    """Return the mean of -log q(y|x') over the pairs."""
    if not pairs:
        raise ValueError("no augmented pairs given")
    return shifted_risk(model, pairs)


def loss_ours(model: ProbModel, pairs: Sequence[AugmentedPair], lam: float) -> float:
    """Return clean CE + lam * gap, evaluated as (1 - lam) * clean + lam * shifted."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    groups = group_pairs(pairs)
    clean = clean_risk(model, groups.x, groups.y)
    return (1.0 - lam) * clean + lam * shifted_risk(model, pairs)


def lr_at(config: TrainConfig, step: int, steps_per_epoch: int = 1) -> float:
    """Return the learning rate of optimisation step ``step`` (0-based).

    Warmup rises linearly as base_lr * (step + 1) / warmup_steps, then the
    cosine schedule decays from base_lr at the end of warmup to 0 at the
    final step, or the step schedule multiplies by ``step_factor`` at every
    milestone epoch passed.
    """
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    warmup = config.warmup_epochs * steps_per_epoch
    total = config.epochs * steps_per_epoch
    if step < warmup:
        return config.base_lr * (step + 1) / warmup

    if config.schedule == "step":
        passed = sum(1 for milestone in config.milestones if step // steps_per_epoch >= milestone)
        return config.base_lr * config.step_factor**passed

    if total <= warmup:
        return config.base_lr
    progress = min((step - warmup) / (total - warmup), 1.0)
    return config.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class SGDMomentum:
    """Heavy-ball SGD with weight decay on the masked parameters.

    v <- momentum * v + (grad + weight_decay * mask * phi); phi <- phi - lr * v.
    """

    def __init__(self, model: ProbModel, momentum: float, weight_decay: float) -> None:
        """Optimizer constructor."""
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._mask = model.decay_mask()
        self._velocity = np.zeros(model.num_params)

    def step(self, model: ProbModel, grad: np.ndarray, lr: float) -> None:
        """Apply one update to the model parameters."""
        phi = model.get_flat()
        update = grad + self.weight_decay * self._mask * phi
        self._velocity = self.momentum * self._velocity + update
        model.set_flat(phi - lr * self._velocity)


def _epoch_row(
    model: ProbModel,
    epoch: int,
    train_loss: float,
    lr: float,
    train_set: Dataset,
    val_set: Dataset,
    eval_pairs: list[AugmentedPair],
) -> EpochRow:
    """Evaluate the end-of-epoch metrics."""
    parts = decompose(model, eval_pairs)
    empty_val = len(val_set) == 0
    return EpochRow(
        epoch=epoch,
        train_loss=train_loss,
        clean_risk=parts.clean_risk,
        shifted_risk=parts.shifted_risk,
        gap=parts.gap,
        train_acc=model.accuracy(train_set.x, train_set.y),
        val_acc=float("nan") if empty_val else model.accuracy(val_set.x, val_set.y),
        val_clean_risk=float("nan") if empty_val else clean_risk(model, val_set.x, val_set.y),
        lr=lr,
        major_features=sum(diag.major for diag in feature_diagnostics(model, train_set.x)),
    )


def train(
    config: TrainConfig,
    train_set: Dataset,
    val_set: Dataset,
    test_set: Dataset,
    op: AugmentationOp,
    prior: ParamPrior,
    oracle: ConceptionOracle | None = None,
    model: ProbModel | None = None,
    snapshot: dict[str, Any] | None = None,
) -> RunRecord:
    """Train a model and return its per-epoch metrics.

    Each step draws fresh CAN samples for the minibatch. On return ``model``
    (created from the seed when not given) holds the parameters of the epoch
    with the highest validation accuracy, and the test metrics are measured
    on them.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    oracle = oracle or train_set.oracle
    if model is None:
        model = ProbModel(train_set.dim, train_set.num_classes, seed=config.seed)
    optimizer = SGDMomentum(model, config.momentum, config.weight_decay)

    batch_size = config.effective_batch_size
    steps_per_epoch = math.ceil(len(train_set) / batch_size)
    rng = np.random.default_rng([config.seed, 0])
    record = RunRecord(config=snapshot if snapshot is not None else asdict(config))
    best_acc = -math.inf
    best_params = model.get_flat()

    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        epoch_lr = lr_at(config, step, steps_per_epoch)
        losses = []
        for start in range(0, len(train_set), batch_size):
            batch = order[start : start + batch_size]
            pairs = batch_augment(
                train_set.x[batch],
                train_set.y[batch],
                op,
                prior,
                oracle,
                config.copies,
                rng,
                config.max_attempts,
                config.fallback,
            )
            record.fallbacks += sum(not pair.accepted for pair in pairs)
            loss, grad = model.value_and_grad(build_objective(config, pairs))
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                _LOGGER.error("Epoch %d step %d: loss is %s", epoch, step, loss)
                raise NonFiniteLossError(step, loss)
            optimizer.step(model, grad, lr_at(config, step, steps_per_epoch))
            losses.append(loss)
            record.step_losses.append(loss)
            step += 1

        eval_pairs = batch_augment(
            train_set.x,
            train_set.y,
            op,
            prior,
            oracle,
            1,
            np.random.default_rng([config.seed, 1, epoch]),
            config.max_attempts,
            True,
        )
        row = _epoch_row(
            model,
            epoch,
            float(np.mean(losses)),
            epoch_lr,
            train_set,
            val_set,
            eval_pairs,
        )
        record.rows.append(row)
        _LOGGER.info(
            "Epoch %d/%d: loss %.4f clean %.4f gap %.4f train acc %.3f val acc %.3f lr %.4g",
            epoch + 1,
            config.epochs,
            row.train_loss,
            row.clean_risk,
            row.gap,
            row.train_acc,
            row.val_acc,
            row.lr,
        )
        if row.val_acc > best_acc:
            best_acc = row.val_acc
            best_params = model.get_flat()
            record.best_epoch = epoch

    if record.best_epoch < 0:
        record.best_epoch = config.epochs - 1
        best_params = model.get_flat()
    model.set_flat(best_params)

    if len(test_set):
        accuracy = model.accuracy(test_set.x, test_set.y)
        record.test = {
            "accuracy": accuracy,
            "error_rate": 1.0 - accuracy,
            "clean_risk": clean_risk(model, test_set.x, test_set.y),
        }
    if record.fallbacks:
        _LOGGER.warning("%d training samples fell back to the identity", record.fallbacks)
    return record


def config_hash(config: dict[str, Any]) -> str:
    """Return the sha256 of the canonical JSON form of a config."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def run_dir_name(config: dict[str, Any], seed: int) -> str:
    """Return ``<hash12>-seed<seed>``."""
    return f"{config_hash(config)[:12]}-seed{seed}"


def write_metrics(record: RunRecord, path: str | Path) -> None:
    """Write one CSV row per epoch."""
    columns = list(EpochRow.__dataclass_fields__)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in record.rows:
            writer.writerow([_csv_value(getattr(row, column)) for column in columns])


def _csv_value(value: Any) -> Any:
    """Format floats with full precision."""
    if isinstance(value, float):
        return format(value, ".17g")
    return value


def save_run(record: RunRecord, model: ProbModel, out_dir: str | Path, seed: int) -> Path:
    """Persist metrics.csv, summary.json and checkpoint.bin in a per-run directory."""
    run_dir = Path(out_dir) / run_dir_name(record.config, seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_metrics(record, run_dir / "metrics.csv")
    summary = {
        "config": record.config,
        "config_hash": config_hash(record.config),
        "seed": seed,
        "epochs": len(record.rows),
        "best_epoch": record.best_epoch,
        "fallbacks": record.fallbacks,
        "test": record.test,
    }
    (run_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8"
    )
    save_checkpoint(model, run_dir / "checkpoint.bin")
    _LOGGER.info("Saved run to %s", run_dir)
    return run_dir
