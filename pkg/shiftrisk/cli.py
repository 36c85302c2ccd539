"""Experiment subcommands.

Every command takes the resolved ExperimentConfig and an output directory,
writes ``config.yaml`` there, and returns an exit code: 0 pass, 1 invariant
violation, 2 configuration error, 3 rejection sampling exhausted.
"""
from __future__ import annotations

from collections.abc import Callable, Sequence
import copy
import csv
from dataclasses import asdict
import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np

from .augment import AugmentationOp
from .cansample import (
    AcceptanceExhaustedError,
    ParamPrior,
    acceptance_rate,
    batch_augment,
    sample_can,
)
from .classifier import ProbModel
from .config import (
    ConfigError,
    ExperimentConfig,
    build_augmentation,
    build_dataset,
    build_splits,
    config_to_dict,
    dump_config,
)
from .const import DECOMPOSITION_TOLERANCE, VARIANCE_SLOPE_RANGE
from .data import Dataset
from .models import VarianceScanRow
from .plot import plot_curves
from .risk import decompose, fit_variance_slope, sandwich_bounds, variance_scan
from .train import InvalidTrainConfigError, NonFiniteLossError, save_run, train
from .workers import run_jobs

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_CONFIG = 2
EXIT_SAMPLING = 3

Command = Callable[..., int]


def _fmt(value: Any) -> Any:
    """Format floats with full precision for CSV output."""
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return value


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """Write a CSV table with a header row."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(value) for value in row])
    _LOGGER.info("Wrote %s (%d rows)", path, len(rows))


def write_summary(path: Path, summary: dict[str, Any]) -> None:
    """Write a JSON summary with sorted keys."""
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare(config: ExperimentConfig, out_dir: str | Path) -> Path:
    """Create the output directory and snapshot the config into it."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(config, out / "config.yaml")
    return out


def _setup(config: ExperimentConfig) -> tuple[Dataset, AugmentationOp, ParamPrior]:
    """Return the full dataset and its augmentation."""
    dataset = build_dataset(config.dataset)
    op, prior = build_augmentation(config.augmentation, dataset.dim)
    return dataset, op, prior


def _model(config: ExperimentConfig, dataset: Dataset, seed: int) -> ProbModel:
    """Return a freshly initialised model for the dataset."""
    return ProbModel(
        dataset.dim,
        dataset.num_classes,
        config.model.widths,
        config.model.activation,
        seed=seed,
    )


def cmd_sample_aug(
    config: ExperimentConfig, out_dir: str | Path, seed: int = 0, workers: int = 1
) -> int:
    """Draw CAN samples for the whole dataset and report acceptance statistics."""
    dataset, op, prior = _setup(config)
    out = _prepare(config, out_dir)
    aug = config.augmentation
    pairs = batch_augment(
        dataset.x,
        dataset.y,
        op,
        prior,
        dataset.oracle,
        aug.copies,
        np.random.default_rng(seed),
        aug.max_attempts,
        aug.fallback,
    )
    write_csv(
        out / "samples.csv",
        ["sample_index", "copy_index"]
        + [f"theta{k}" for k in range(op.dims)]
        + ["attempts", "accepted", "label"],
        [
            [pair.index, pair.copy, *pair.theta, pair.attempts, int(pair.accepted), pair.y]
            for pair in pairs
        ],
    )
    violations = sum(
        1 for pair in pairs if pair.accepted and dataset.oracle(pair.x_prime) != pair.y
    )
    rate = acceptance_rate(pairs)
    write_summary(
        out / "summary.json",
        {
            "operator": op.name,
            "samples": len(pairs),
            "proposals": sum(pair.attempts for pair in pairs),
            "fallbacks": sum(not pair.accepted for pair in pairs),
            "acceptance_rate": rate,
            "oracle_violations": violations,
        },
    )
    _LOGGER.info("Acceptance rate of %s: %.4f", op.name, rate)
    if violations:
        _LOGGER.error("%d accepted samples leave their class", violations)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_check_decomposition(
    config: ExperimentConfig, out_dir: str | Path, seed: int = 0, workers: int = 1
) -> int:
    """Check shifted = clean + gap on randomized models, subsets and copy counts."""
    dataset, op, prior = _setup(config)
    out = _prepare(config, out_dir)
    aug = config.augmentation
    trials = config.experiment.decomposition_trials
    size = min(config.experiment.samples, len(dataset))

    def _trial(trial: int) -> list[Any]:
        rng = np.random.default_rng([seed, trial])
        model = _model(config, dataset, seed=int(rng.integers(2**31)))
        model.set_flat(model.get_flat() * rng.uniform(0.5, 4.0))
        n = int(rng.integers(1, size + 1))
        m = int(rng.integers(1, 5))
        chosen = rng.choice(len(dataset), size=n, replace=False)
        pairs = batch_augment(
            dataset.x[chosen],
            dataset.y[chosen],
            op,
            prior,
            dataset.oracle,
            m,
            rng,
            aug.max_attempts,
            aug.fallback,
        )
        parts = decompose(model, pairs)
        return [trial, n, m, parts.shifted_risk, parts.clean_risk, parts.gap, parts.residual]

    rows = run_jobs(_trial, range(trials), workers)
    write_csv(
        out / "residuals.csv",
        ["trial", "N", "M", "shifted_risk", "clean_risk", "gap", "residual"],
        rows,
    )
    worst = max(row[-1] for row in rows)
    write_summary(out / "summary.json", {"trials": trials, "worst_residual": worst})
    if worst > DECOMPOSITION_TOLERANCE:
        _LOGGER.error("Decomposition violated: worst residual %.3e", worst)
        return EXIT_VIOLATION
    _LOGGER.info("Decomposition holds on %d trials (worst residual %.3e)", trials, worst)
    return EXIT_OK


def cmd_bounds_check(
    config: ExperimentConfig, out_dir: str | Path, seed: int = 0, workers: int = 1
) -> int:
    """Check the normaliser sandwich on random (model, x, x') draws."""
    dataset, op, prior = _setup(config)
    out = _prepare(config, out_dir)
    aug = config.augmentation
    draws = config.experiment.bounds_draws

    def _draw(draw: int) -> list[Any]:
        rng = np.random.default_rng([seed, draw])
        model = _model(config, dataset, seed=int(rng.integers(2**31)))
        model.set_flat(model.get_flat() * rng.uniform(0.5, 4.0))
        index = int(rng.integers(len(dataset)))
        pair = sample_can(
            op,
            prior,
            dataset.oracle,
            dataset.x[index],
            int(dataset.y[index]),
            aug.max_attempts,
            rng,
            aug.fallback,
            index,
        )
        report = sandwich_bounds(model, pair.x, pair.x_prime, pair.y)
        return [
            draw,
            index,
            report.lhs,
            report.lower,
            report.upper,
            report.alpha_star,
            report.beta_star,
            report.literal_lower,
            int(report.holds),
            int(report.literal_holds),
        ]

    rows = run_jobs(_draw, range(draws), workers)
    write_csv(
        out / "bounds.csv",
        [
            "draw",
            "index",
            "lhs",
            "lower",
            "upper",
            "alpha_star",
            "beta_star",
            "literal_lower",
            "holds",
            "literal_holds",
        ],
        rows,
    )
    violations = sum(1 for row in rows if not row[-2])
    literal = sum(1 for row in rows if not row[-1])
    write_summary(
        out / "summary.json",
        {"draws": draws, "violations": violations, "literal_violations": literal},
    )
    if literal:
        _LOGGER.warning("The max(beta*, 1) lower bound fails on %d of %d draws", literal, draws)
    if violations:
        _LOGGER.error("Sandwich violated on %d of %d draws", violations, draws)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_variance_scan(
    config: ExperimentConfig, out_dir: str | Path, seed: int = 0, workers: int = 1
) -> int:
    """Measure Var(gap estimate) against N * M on a frozen random model."""
    dataset, op, prior = _setup(config)
    section = config.experiment
    if section.samples > len(dataset):
        raise ConfigError(
            None,
            f"experiment.samples = {section.samples} exceeds the {len(dataset)} samples",
        )
    out = _prepare(config, out_dir)
    model = _model(config, dataset, seed=config.model.seed)
    rows = variance_scan(
        model,
        dataset.x,
        dataset.y,
        op,
        prior,
        dataset.oracle,
        section.samples,
        section.copies,
        section.trials,
        np.random.default_rng(seed),
        config.augmentation.max_attempts,
        workers,
    )
    write_csv(
        out / "variance.csv",
        list(VarianceScanRow.__dataclass_fields__),
        [list(asdict(row).values()) for row in rows],
    )
    slope = fit_variance_slope(rows)
    low, high = VARIANCE_SLOPE_RANGE
    write_summary(out / "summary.json", {"slope": slope, "range": [low, high]})
    _LOGGER.info("Fitted log-log slope %.4f", slope)
    if not low <= slope <= high:
        _LOGGER.error("Slope %.4f outside [%s, %s]", slope, low, high)
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_train(
    config: ExperimentConfig, out_dir: str | Path, seed: int = 0, workers: int = 1
) -> int:
    """Train one model and persist its run directory with curves."""
    train_set, val_set, test_set = build_splits(config)
    op, prior = build_augmentation(config.augmentation, train_set.dim)
    out = _prepare(config, out_dir)
    model = _model(config, train_set, seed=config.model.seed)
    record = train(
        config.train,
        train_set,
        val_set,
        test_set,
        op,
        prior,
        model=model,
        snapshot=config_to_dict(config),
    )
    run_dir = save_run(record, model, out, config.train.seed)
    dump_config(config, run_dir / "config.yaml")
    plot_curves(record, run_dir / "curves.svg", f"{config.train.strategy} ({op.name})")
    _LOGGER.info("Test metrics: %s", record.test)
    return EXIT_OK


def _ablation_cell(
    config: ExperimentConfig,
    splits: tuple[Dataset, Dataset, Dataset],
    op: AugmentationOp,
    prior: ParamPrior,
    lam: float,
    seed: int,
) -> list[Any]:
    """Train one (lambda, seed) cell; failures become NaN rows."""
    cell = copy.deepcopy(config)
    cell.train.strategy = "ours"
    cell.train.lam = lam
    cell.train.seed = seed
    train_set, val_set, test_set = splits
    model = _model(cell, train_set, seed=seed)
    try:
        record = train(cell.train, train_set, val_set, test_set, op, prior, model=model)
    except (AcceptanceExhaustedError, NonFiniteLossError, ValueError):
        _LOGGER.error("Ablation cell lambda=%s seed=%d failed", lam, seed, exc_info=True)
        return [lam, seed, math.nan, math.nan, math.nan, "failed"]
    final = record.rows[-1]
    return [
        lam,
        seed,
        record.test.get("accuracy", math.nan),
        final.clean_risk,
        record.test.get("clean_risk", math.nan),
        "ok",
    ]


def cmd_ablate_lambda(
    config: ExperimentConfig,
    out_dir: str | Path,
    seed: int = 0,
    workers: int = 1,
    lambdas: Sequence[float] | None = None,
    seeds: int | None = None,
) -> int:
    """Train one run per (lambda, seed) and tabulate mean and std per lambda."""
    lambdas = list(config.experiment.lambdas if lambdas is None else lambdas)
    seeds = config.experiment.seeds if seeds is None else seeds
    splits = build_splits(config)
    op, prior = build_augmentation(config.augmentation, splits[0].dim)
    out = _prepare(config, out_dir)

    cells = [(lam, seed + s) for lam in lambdas for s in range(seeds)]
    runs = run_jobs(
        lambda cell: _ablation_cell(config, splits, op, prior, *cell),
        cells,
        workers,
    )
    write_csv(
        out / "ablation_runs.csv",
        ["lambda", "seed", "test_accuracy", "final_clean_risk", "test_clean_risk", "status"],
        runs,
    )

    table = []
    for lam in lambdas:
        cell_runs = [run for run in runs if run[0] == lam]
        accuracy = np.array([run[2] for run in cell_runs], dtype=np.float64)
        risk = np.array([run[4] for run in cell_runs], dtype=np.float64)
        table.append(
            [
                lam,
                len(cell_runs),
                float(np.mean(accuracy)),
                float(np.std(accuracy)),
                float(np.mean(risk)),
                float(np.std(risk)),
            ]
        )
        _LOGGER.info(
            "lambda=%s: accuracy %.4f +- %.4f, test clean risk %.4f",
            lam,
            table[-1][2],
            table[-1][3],
            table[-1][4],
        )
    write_csv(
        out / "ablation.csv",
        ["lambda", "runs", "mean_accuracy", "std_accuracy", "mean_clean_risk", "std_clean_risk"],
        table,
    )
    return EXIT_OK


COMMANDS: dict[str, Command] = {
    "sample-aug": cmd_sample_aug,
    "check-decomposition": cmd_check_decomposition,
    "bounds-check": cmd_bounds_check,
    "variance-scan": cmd_variance_scan,
    "train": cmd_train,
    "ablate-lambda": cmd_ablate_lambda,
}


def run_command(name: str, config: ExperimentConfig, out_dir: str | Path, **options: Any) -> int:
    """Run a subcommand and map its failures onto exit codes."""
    try:
        return COMMANDS[name](config, out_dir, **options)
    except (ConfigError, InvalidTrainConfigError) as err:
        _LOGGER.error("Configuration error: %s", err)
        return EXIT_CONFIG
    except AcceptanceExhaustedError as err:
        _LOGGER.error("Sampling failed: %s", err)
        return EXIT_SAMPLING
    except NonFiniteLossError as err:
        _LOGGER.error("Training diverged at step %d: %s", err.step, err)
        return EXIT_VIOLATION
