"""Desk-scale synthetic datasets whose labels come from an exact oracle."""
from __future__ import annotations

import logging
import math

import numpy as np

from ..cansample import HalfPlaneOracle, NearestCenterOracle, RadialBandOracle
from .dataset import Dataset

_LOGGER = logging.getLogger(__name__)


class EmptyClassError(ValueError):
    """Raised when long-tail subsampling would leave a class with no samples."""


def _directions(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    """Return ``count`` unit vectors uniform on the sphere."""
    raw = rng.standard_normal((count, dim))
    return raw / np.linalg.norm(raw, axis=1, keepdims=True)


def gen_blobs(
    k: int,
    dim: int,
    per_class: int,
    separation: float,
    seed: int,
    std: float = 1.0,
) -> Dataset:
    """Return Gaussian clusters labelled by their nearest center.

    Centers sit at ``separation`` times the first k unit axes (random unit
    directions when k > dim). Draws whose nearest center is not their own
    are redrawn, so every label agrees with the oracle.
    """
    if k < 2:
        raise ValueError(f"gen_blobs needs k >= 2, got {k}")
    if separation <= 0:
        raise ValueError(f"separation must be positive, got {separation}")
    rng = np.random.default_rng(seed)
    if k <= dim:
        centers = separation * np.eye(k, dim)
    else:
        centers = separation * _directions(rng, k, dim)
    oracle = NearestCenterOracle(centers)

    xs, ys = [], []
    for c in range(k):
        kept = np.empty((0, dim))
        while kept.shape[0] < per_class:
            draw = centers[c] + std * rng.standard_normal((per_class, dim))
            kept = np.vstack([kept, draw[oracle.label_batch(draw) == c]])
        xs.append(kept[:per_class])
        ys.append(np.full(per_class, c, dtype=np.int64))
    _LOGGER.debug("Generated %d blobs x %d samples in %d dimensions", k, per_class, dim)
    return Dataset(np.vstack(xs), np.concatenate(ys), k, oracle, name="blobs")


def gen_rings(
    k: int,
    per_class: int,
    seed: int,
    dim: int = 2,
    width: float = 1.0,
    margin: float = 0.1,
) -> Dataset:
    """Return concentric shells labelled by radial band.

    Class c has radius in [c*width + margin, (c+1)*width - margin], so any
    rotation keeps every sample inside its band.
    """
    if k < 2:
        raise ValueError(f"gen_rings needs k >= 2, got {k}")
    if not 0.0 <= margin < width / 2:
        raise ValueError(f"margin must lie in [0, width/2), got {margin}")
    rng = np.random.default_rng(seed)
    oracle = RadialBandOracle(width * np.arange(1, k))

    xs, ys = [], []
    for c in range(k):
        radius = rng.uniform(c * width + margin, (c + 1) * width - margin, per_class)
        xs.append(radius[:, None] * _directions(rng, per_class, dim))
        ys.append(np.full(per_class, c, dtype=np.int64))
    return Dataset(np.vstack(xs), np.concatenate(ys), k, oracle, name="rings")


def gen_halfplane(per_class: int, dim: int = 2, seed: int = 0) -> Dataset:
    """Return standard normal samples labelled by the sign of coordinate 0."""
    rng = np.random.default_rng(seed)
    oracle = HalfPlaneOracle(axis=0)
    xs, ys = [], []
    for c in (0, 1):
        draw = rng.standard_normal((per_class, dim))
        draw[:, 0] = np.abs(draw[:, 0]) * (1.0 if c else -1.0)
        xs.append(draw)
        ys.append(np.full(per_class, c, dtype=np.int64))
    return Dataset(np.vstack(xs), np.concatenate(ys), 2, oracle, name="halfplane")


def longtail_counts(counts: np.ndarray, ratio: float) -> np.ndarray:
    """Return floor(n_i * ratio^(-i/(l-1))) for every class i."""
    l = counts.shape[0]
    if l < 2:
        return counts.copy()
    return np.array(
        [math.floor(int(n) * ratio ** (-i / (l - 1)) + 1e-9) for i, n in enumerate(counts)],
        dtype=np.int64,
    )


def longtail_subsample(dataset: Dataset, ratio: float, seed: int) -> Dataset:
    """Return an exponentially imbalanced subsample, class 0 the largest."""
    if ratio < 1.0:
        raise ValueError(f"imbalance ratio must be >= 1, got {ratio}")
    counts = dataset.class_counts()
    targets = longtail_counts(counts, ratio)
    if np.any(targets == 0):
        empty = int(np.flatnonzero(targets == 0)[0])
        raise EmptyClassError(f"class {empty} would keep no samples at ratio {ratio}")
    if np.array_equal(targets, counts):
        return dataset

    rng = np.random.default_rng(seed)
    keep = []
    for c, target in enumerate(targets):
        members = np.flatnonzero(dataset.y == c)
        keep.append(rng.choice(members, size=int(target), replace=False))
    _LOGGER.info("Long-tail subsample at ratio %s keeps %s", ratio, targets.tolist())
    return dataset.subset(np.sort(np.concatenate(keep)), f"{dataset.name}-lt{ratio:g}")
