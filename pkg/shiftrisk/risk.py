"""Empirical risks on clean and augmented samples and the gap between them.

For cross-entropy with a softmax model the shifted risk splits exactly into
the clean risk plus the mean log-ratio ln q(y|x) - ln q(y|x'), the
consistency gap. All ratios are handled as differences of log-densities.
"""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import logging
import math

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import log_softmax, softmax

from .augment import AugmentationOp
from .cansample import ConceptionOracle, GridPrior, ParamPrior, batch_augment
from .classifier import ProbModel
from .const import DEFAULT_MAX_ATTEMPTS, VARIANCE_MIN_TRIALS, VARIANCE_PILOT_DRAWS
from .models import (
    AugmentedPair,
    FeatureDiagnostic,
    RiskDecomposition,
    SandwichReport,
    VarianceScanRow,
)
from .workers import run_jobs

_LOGGER = logging.getLogger(__name__)


class RaggedGroupsError(ValueError):
    """Raised when clean samples carry different numbers of augmented copies."""


class DegenerateBoundsError(ArithmeticError):
    """Raised when the smallest normaliser term is not positive."""


@dataclass
class PairGroups:
    """Augmented pairs arranged as N clean samples times M copies."""

    x: np.ndarray
    y: np.ndarray
    x_prime: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        """Return (N, M)."""
        return self.x_prime.shape[0], self.x_prime.shape[1]


def group_pairs(pairs: Sequence[AugmentedPair]) -> PairGroups:
    """Group pairs by clean-sample index, in order of first appearance."""
    if not pairs:
        raise ValueError("no augmented pairs given")
    groups: dict[int, list[AugmentedPair]] = {}
    for pair in pairs:
        groups.setdefault(pair.index, []).append(pair)
    sizes = {len(members) for members in groups.values()}
    if len(sizes) != 1:
        raise RaggedGroupsError(f"group sizes differ: {sorted(sizes)}")
    members = list(groups.values())
    return PairGroups(
        x=np.stack([group[0].x for group in members]),
        y=np.array([group[0].y for group in members], dtype=np.int64),
        x_prime=np.stack([np.stack([pair.x_prime for pair in group]) for group in members]),
    )


def _log_q_rows(model: ProbModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return log q(y_k|x_k), evaluating each distinct (x, y) row once.

    Identical rows therefore get bit-identical values wherever they occur.
    """
    keys = np.hstack([x, y[:, None].astype(np.float64)])
    unique, inverse = np.unique(keys, axis=0, return_inverse=True)
    values = model.log_q(unique[:, :-1], unique[:, -1].astype(np.int64))
    return values[np.asarray(inverse).reshape(-1)]


def clean_risk(model: ProbModel, x: ArrayLike, y: ArrayLike) -> float:
    """Return the mean of -log q(y_i|x_i) over a clean batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if x.shape[0] == 0:
        raise ValueError("clean batch is empty")
    return float(np.mean(-_log_q_rows(model, x, y)))


def _grouped_log_q(model: ProbModel, groups: PairGroups) -> tuple[np.ndarray, np.ndarray]:
    """Return log q(y_i|x_i) (N,) and log q(y_i|x'_ij) (N, M) from one evaluation."""
    n, m = groups.shape
    rows = np.concatenate([groups.x, groups.x_prime.reshape(n * m, -1)])
    labels = np.concatenate([groups.y, np.repeat(groups.y, m)])
    values = _log_q_rows(model, rows, labels)
    return values[:n], values[n:].reshape(n, m)


def shifted_risk(model: ProbModel, pairs: Sequence[AugmentedPair]) -> float:
    """Return (1/N) sum_i (1/M) sum_j -log q(y_i|x'_ij)."""
    groups = group_pairs(pairs)
    n, m = groups.shape
    values = _log_q_rows(model, groups.x_prime.reshape(n * m, -1), np.repeat(groups.y, m))
    return float(np.mean(np.mean(-values.reshape(n, m), axis=1)))


def gap_estimator(model: ProbModel, pairs: Sequence[AugmentedPair]) -> float:
    """Return the M x N gap estimate, the double mean of log q(y|x) - log q(y|x')."""
    clean, augmented = _grouped_log_q(model, group_pairs(pairs))
    return float(np.mean(np.mean(clean[:, None] - augmented, axis=1)))


def decompose(model: ProbModel, pairs: Sequence[AugmentedPair]) -> RiskDecomposition:
    """Return shifted risk, clean risk, gap and the residual of shifted = clean + gap."""
    groups = group_pairs(pairs)
    shifted = shifted_risk(model, pairs)
    clean = clean_risk(model, groups.x, groups.y)
    gap = gap_estimator(model, pairs)
    residual = abs(shifted - (clean + gap))
    _LOGGER.debug(
        "Decomposition N=%d M=%d: shifted=%.12g clean=%.12g gap=%.12g residual=%.3e",
        *groups.shape,
        shifted,
        clean,
        gap,
        residual,
    )
    return RiskDecomposition(shifted, clean, gap, residual)


def sandwich_bounds(
    model: ProbModel, x: ArrayLike, x_prime: ArrayLike, y: int
) -> SandwichReport:
    """Bound |ln rho_x - ln rho_x'| by the difference of the normalisers.

    With rho_{x,j} = exp((w_j - w_y)^T h(x)) and rho_x = sum_j rho_{x,j},
    alpha* and beta* are the smallest and largest rho_{.,j} over both
    samples. Since rho_x lies in [1, l * beta*], the mean value theorem for
    ln gives |d rho| / max(l * beta*, 1) <= lhs <= |d rho| / alpha*.
    ``literal_lower`` keeps the tighter |d rho| / max(beta*, 1), which does
    not hold in general.
    """
    z_x = model.logits(np.asarray(x, dtype=np.float64)[None, :])[0]
    z_xp = model.logits(np.asarray(x_prime, dtype=np.float64)[None, :])[0]
    shift_x = z_x - z_x[y]
    shift_xp = z_xp - z_xp[y]
    rho_j = np.exp(np.stack([shift_x, shift_xp]))
    alpha_star = float(rho_j.min())
    beta_star = float(rho_j.max())
    if not alpha_star > 0.0 or not math.isfinite(beta_star):
        raise DegenerateBoundsError(f"alpha*={alpha_star}, beta*={beta_star}: logits overflow")

    # rho_{.,y} = 1 exactly; only the off-label masses carry the difference
    off = np.delete(rho_j, y, axis=1)
    diff = abs(float(np.sum(off[0] - off[1])))
    lhs = abs(math.log1p(float(off[0].sum())) - math.log1p(float(off[1].sum())))
    return SandwichReport(
        lhs=lhs,
        lower=diff / max(model.num_classes * beta_star, 1.0),
        upper=diff / alpha_star,
        alpha_star=alpha_star,
        beta_star=beta_star,
        literal_lower=diff / max(beta_star, 1.0),
        linear_term=float(np.sum(np.abs(shift_x - shift_xp))),
    )


def exact_shifted_risk(
    model: ProbModel,
    x: ArrayLike,
    y: ArrayLike,
    op: AugmentationOp,
    prior: GridPrior,
    oracle: ConceptionOracle,
) -> float:
    """Return the shifted risk by enumerating a finite parameter set.

    Each clean sample averages -log q(y|A(theta, x)) over the grid points
    whose image keeps the label, with the prior masses renormalised over
    them (the truncated prior). A sample with no such point keeps x' = x.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    risks = []
    for sample, label in zip(x, y):
        images = np.stack([op.apply(point, sample) for point in prior.points])
        keep = oracle.label_batch(images) == label
        if not np.any(keep):
            risks.append(-float(model.log_q(sample, int(label))))
            continue
        weights = prior.weights[keep] / prior.weights[keep].sum()
        nll = -model.log_q(images[keep], np.full(int(keep.sum()), label))
        risks.append(float(weights @ nll))
    return float(np.mean(risks))


def variance_scan(
    model: ProbModel,
    x: ArrayLike,
    y: ArrayLike,
    op: AugmentationOp,
    prior: ParamPrior,
    oracle: ConceptionOracle,
    samples: int,
    copies: Sequence[int],
    trials: int,
    rng: np.random.Generator,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    workers: int = 1,
    pilot_draws: int = VARIANCE_PILOT_DRAWS,
) -> list[VarianceScanRow]:
    """Measure Var(gap estimate) over independent augmentation redraws.

    ``samples`` clean samples are chosen once and kept fixed; for every M in
    ``copies`` the gap estimate is recomputed ``trials`` times on fresh
    augmentations. The predicted variance is (1 / N^2 M) sum_i Var_i with
    the per-sample variances Var_i estimated from ``pilot_draws`` copies.
    The model is not modified.
    """
    if trials < VARIANCE_MIN_TRIALS:
        raise ValueError(
            f"variance scan needs at least {VARIANCE_MIN_TRIALS} trials, got {trials}"
        )
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if samples > x.shape[0]:
        raise ValueError(f"asked for {samples} clean samples, dataset has {x.shape[0]}")
    chosen = np.sort(rng.choice(x.shape[0], size=samples, replace=False))
    clean_x, clean_y = x[chosen], y[chosen]
    base = int(rng.integers(2**63))

    pilot = batch_augment(
        clean_x,
        clean_y,
        op,
        prior,
        oracle,
        pilot_draws,
        np.random.default_rng([base, 0]),
        max_attempts,
    )
    clean_lq, augmented_lq = _grouped_log_q(model, group_pairs(pilot))
    per_sample_var = np.var(clean_lq[:, None] - augmented_lq, axis=1, ddof=1)

    rows = []
    for m in copies:

        def _trial(trial: int, m: int = m) -> float:
            pairs = batch_augment(
                clean_x,
                clean_y,
                op,
                prior,
                oracle,
                m,
                np.random.default_rng([base, m, trial + 1]),
                max_attempts,
            )
            return gap_estimator(model, pairs)

        gaps = np.array(run_jobs(_trial, range(trials), workers))
        row = VarianceScanRow(
            N=samples,
            M=int(m),
            trials=trials,
            empirical_variance=float(np.var(gaps, ddof=1)),
            predicted_variance=float(per_sample_var.sum() / (samples**2 * m)),
            mean_gap=float(gaps.mean()),
        )
        _LOGGER.info(
            "Variance scan N=%d M=%d: empirical %.4e, predicted %.4e",
            row.N,
            row.M,
            row.empirical_variance,
            row.predicted_variance,
        )
        rows.append(row)
    return rows


def fit_variance_slope(rows: Sequence[VarianceScanRow]) -> float:
    """Return the least-squares slope of log variance against log(N * M)."""
    nm = np.array([row.N * row.M for row in rows], dtype=np.float64)
    variance = np.array([row.empirical_variance for row in rows])
    if np.any(variance <= 0.0):
        raise ValueError("log-log fit needs strictly positive variances")
    slope, _ = np.polyfit(np.log(nm), np.log(variance), 1)
    return float(slope)


def feature_diagnostics(
    model: ProbModel, x: ArrayLike, tau: float | None = None
) -> list[FeatureDiagnostic]:
    """Return the mean per-feature softmax entropy and head-weight spread.

    A feature whose single-feature class density is concentrated (mean
    entropy below ``tau``, ln(l) / 2 by default) is flagged as major. The
    bias row of the head is not a feature and is left out.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[0] == 0:
        raise ValueError("diagnostics need a non-empty batch")
    if tau is None:
        tau = math.log(model.num_classes) / 2.0
    hidden = model.features(x)
    report = []
    for d in range(model.feature_dim):
        weights = model.head[d]
        logits = hidden[:, d, None] * weights[None, :]
        entropy = -np.sum(softmax(logits, axis=1) * log_softmax(logits, axis=1), axis=1)
        mean_entropy = float(entropy.mean())
        report.append(
            FeatureDiagnostic(
                index=d,
                mean_entropy=mean_entropy,
                weight_spread=float(np.max(np.abs(weights - weights.mean()))),
                major=mean_entropy < tau,
            )
        )
    return report
