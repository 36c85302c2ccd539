"""Labelled datasets tied to their conception oracle, and stratified splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
import logging
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike

from ..cansample import ConceptionOracle, OracleMismatchError
from ..const import DEFAULT_TEST_FRACTION, DEFAULT_VAL_FRACTION

_LOGGER = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Samples, labels and the oracle that generated the labels."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int
    oracle: ConceptionOracle
    image_shape: tuple[int, ...] | None = None
    name: str = "dataset"

    def __post_init__(self) -> None:
        """Check shapes, label range and agreement with the oracle."""
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.x.shape[0]} samples but {self.y.shape[0]} labels")
        if np.any((self.y < 0) | (self.y >= self.num_classes)):
            raise ValueError(f"labels must lie in 0..{self.num_classes - 1}")
        if self.x.shape[0]:
            mismatch = np.flatnonzero(self.oracle.label_batch(self.x) != self.y)
            if mismatch.size:
                raise OracleMismatchError(
                    f"{self.name}: {mismatch.size} labels disagree with the oracle "
                    f"(first at index {mismatch[0]})"
                )

    def __len__(self) -> int:
        """Return the number of samples."""
        return int(self.x.shape[0])

    @property
    def dim(self) -> int:
        """Return the sample dimension."""
        return int(self.x.shape[1])

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Return the per-coordinate minimum and maximum."""
        return self.x.min(axis=0), self.x.max(axis=0)

    def class_counts(self) -> np.ndarray:
        """Return the number of samples per class."""
        return np.bincount(self.y, minlength=self.num_classes)

    def subset(self, indices: ArrayLike, name: str | None = None) -> Dataset:
        """Return the samples at the given indices."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.x[indices],
            self.y[indices],
            self.num_classes,
            self.oracle,
            self.image_shape,
            name or self.name,
        )

    def to_csv(self, path: str | Path) -> None:
        """Write the samples with header x0,...,x{d-1},y."""
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow([f"x{k}" for k in range(self.dim)] + ["y"])
            for row, label in zip(self.x, self.y):
                writer.writerow([format(value, ".17g") for value in row] + [int(label)])
        _LOGGER.debug("Wrote %d samples to %s", len(self), path)


@dataclass
class SplitSpec:
    """Fractions of a dataset assigned to train, validation and test."""

    train: float = 1.0 - DEFAULT_VAL_FRACTION - DEFAULT_TEST_FRACTION
    val: float = DEFAULT_VAL_FRACTION
    test: float = DEFAULT_TEST_FRACTION
    seed: int = 0
    fractions: tuple[float, float, float] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Validate the fractions."""
        self.fractions = (self.train, self.val, self.test)
        if any(fraction < 0.0 for fraction in self.fractions):
            raise ValueError(f"split fractions must be non-negative, got {self.fractions}")
        if sum(self.fractions) > 1.0 + 1e-9:
            raise ValueError(f"split fractions sum to {sum(self.fractions)} > 1")


def _apportion(counts: np.ndarray, total: int) -> np.ndarray:
    """Split ``total`` across classes in proportion to counts (largest remainder)."""
    if total == 0 or counts.sum() == 0:
        return np.zeros_like(counts)
    quota = counts * (total / counts.sum())
    share = np.floor(quota).astype(np.int64)
    remainder = quota - share
    for c in np.argsort(-remainder, kind="stable")[: total - int(share.sum())]:
        share[c] += 1
    return share


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Return disjoint, class-stratified train/val/test subsets."""
    n = len(dataset)
    counts = dataset.class_counts()
    n_val = round(n * spec.val)
    n_test = round(n * spec.test)
    n_train = min(round(n * spec.train), n - n_val - n_test)

    val_share = _apportion(counts, n_val)
    test_share = np.minimum(_apportion(counts, n_test), counts - val_share)
    train_share = np.minimum(_apportion(counts, n_train), counts - val_share - test_share)

    rng = np.random.default_rng(spec.seed)
    parts: tuple[list[int], list[int], list[int]] = ([], [], [])
    for c in range(dataset.num_classes):
        members = rng.permutation(np.flatnonzero(dataset.y == c))
        cuts = np.cumsum([val_share[c], test_share[c], train_share[c]])
        parts[1].extend(members[: cuts[0]])
        parts[2].extend(members[cuts[0] : cuts[1]])
        parts[0].extend(members[cuts[1] : cuts[2]])

    train, val, test = (
        dataset.subset(np.sort(np.asarray(part, dtype=np.int64)), f"{dataset.name}-{tag}")
        for part, tag in zip(parts, ("train", "val", "test"))
    )
    _LOGGER.debug("Split %s into %d/%d/%d", dataset.name, len(train), len(val), len(test))
    return train, val, test
