"""Conception oracles, parameter priors and rejection sampling from the CAN.

The consistency augmentation neighborhood (CAN) of a clean sample x is the
part of its augmentation neighborhood that keeps the oracle label of x.
Sampling from it means sampling theta from the prior truncated to the
parameters whose image stays in the class level set; this module does that
by rejection.
"""
from __future__ import annotations

from collections.abc import Sequence
import logging

import numpy as np
from numpy.typing import ArrayLike
from scipy import stats
from scipy.spatial import cKDTree

from .augment import AugmentationOp, NoInverseError, NotInImageError, ParamSpace
from .const import DEFAULT_MAX_ATTEMPTS
from .models import AugmentedPair

_LOGGER = logging.getLogger(__name__)


class AcceptanceExhaustedError(RuntimeError):
    """Raised when rejection sampling finds no parameter inside the CAN."""

    def __init__(self, sample_index: int, attempts: int) -> None:
        """Record the offending sample index."""
        super().__init__(
            f"sample {sample_index}: no accepted parameter after {attempts} attempts"
        )
        self.sample_index = sample_index
        self.attempts = attempts


class OracleMismatchError(ValueError):
    """Raised when a stored label disagrees with the conception oracle."""


class ConceptionOracle:
    """Deterministic ground-truth labeler mapping samples to classes."""

    def __init__(self, num_classes: int) -> None:
        """Oracle constructor."""
        if num_classes < 2:
            raise ValueError(f"an oracle needs at least 2 classes, got {num_classes}")
        self.num_classes = num_classes

    def __call__(self, x: ArrayLike) -> int:
        """Return the class of a single sample."""
        return int(self.label(np.asarray(x, dtype=np.float64)))

    def label(self, x: np.ndarray) -> int:
        """Return the class of x."""
        raise NotImplementedError

    def label_batch(self, xs: ArrayLike) -> np.ndarray:
        """Return the classes of the rows of xs."""
        return np.array([self(row) for row in np.asarray(xs, dtype=np.float64)], dtype=np.int64)


class HalfPlaneOracle(ConceptionOracle):
    """Class 1 when coordinate ``axis`` is positive, class 0 otherwise."""

    def __init__(self, axis: int = 0) -> None:
        """Half-plane oracle constructor."""
        super().__init__(2)
        self.axis = axis

    def label(self, x: np.ndarray) -> int:
        return int(x[self.axis] > 0.0)

    def label_batch(self, xs: ArrayLike) -> np.ndarray:
        return (np.asarray(xs, dtype=np.float64)[:, self.axis] > 0.0).astype(np.int64)


class NearestCenterOracle(ConceptionOracle):
    """Index of the nearest class center (ties go to the lower index)."""

    def __init__(self, centers: ArrayLike) -> None:
        """Nearest-center oracle constructor."""
        self.centers = np.asarray(centers, dtype=np.float64)
        super().__init__(self.centers.shape[0])

    def label(self, x: np.ndarray) -> int:
        return int(np.argmin(np.sum((self.centers - x) ** 2, axis=1)))

    def label_batch(self, xs: ArrayLike) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        dist = np.sum((xs[:, None, :] - self.centers[None, :, :]) ** 2, axis=2)
        return np.argmin(dist, axis=1).astype(np.int64)


class RadialBandOracle(ConceptionOracle):
    """Band index of the Euclidean norm between increasing radius edges."""

    def __init__(self, edges: ArrayLike) -> None:
        """Radial-band oracle constructor; ``edges`` are the interior radii."""
        self.edges = np.asarray(edges, dtype=np.float64)
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("band edges must be strictly increasing")
        super().__init__(self.edges.shape[0] + 1)

    def label(self, x: np.ndarray) -> int:
        return int(np.searchsorted(self.edges, np.linalg.norm(x), side="right"))

    def label_batch(self, xs: ArrayLike) -> np.ndarray:
        norms = np.linalg.norm(np.asarray(xs, dtype=np.float64), axis=1)
        return np.searchsorted(self.edges, norms, side="right").astype(np.int64)


class NearestNeighbourOracle(ConceptionOracle):
    """Label of the nearest stored sample, for data without a known labeler."""

    def __init__(self, xs: ArrayLike, ys: ArrayLike, num_classes: int) -> None:
        """Nearest-neighbour oracle constructor."""
        super().__init__(num_classes)
        self._labels = np.asarray(ys, dtype=np.int64)
        self._tree = cKDTree(np.asarray(xs, dtype=np.float64))

    def label(self, x: np.ndarray) -> int:
        _, index = self._tree.query(x)
        return int(self._labels[index])

    def label_batch(self, xs: ArrayLike) -> np.ndarray:
        _, index = self._tree.query(np.asarray(xs, dtype=np.float64))
        return self._labels[index]


class ParamPrior:
    """Distribution p_i(theta) on an operator's parameter space."""

    kind = "prior"

    @property
    def dims(self) -> int:
        """Return the parameter dimension."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        """Draw one parameter vector."""
        raise NotImplementedError

    def pdf(self, theta: ArrayLike) -> float:
        """Return the density (point mass for discrete priors) at theta."""
        raise NotImplementedError

    def cdf(self, theta: float) -> float:
        """Return the CDF of a one-dimensional prior."""
        raise NotImplementedError(f"{self.kind} prior has no univariate CDF")

    def truncated_cdf(self, theta: float, lower: float, upper: float) -> float:
        """Return the CDF of the prior truncated to [lower, upper]."""
        low, high = self.cdf(lower), self.cdf(upper)
        if high <= low:
            raise ValueError(f"interval [{lower}, {upper}] carries no prior mass")
        return float(np.clip((self.cdf(theta) - low) / (high - low), 0.0, 1.0))


class UniformBoxPrior(ParamPrior):
    """Uniform distribution on the parameter box."""

    kind = "uniform"

    def __init__(self, space: ParamSpace) -> None:
        """Uniform prior constructor."""
        self.space = space

    @property
    def dims(self) -> int:
        return self.space.dims

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.space.lower, self.space.upper)

    def pdf(self, theta: ArrayLike) -> float:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        return 1.0 / self.space.volume if self.space.contains(theta) else 0.0

    def cdf(self, theta: float) -> float:
        if self.dims != 1:
            return super().cdf(theta)
        low, high = self.space.lower[0], self.space.upper[0]
        return float(np.clip((theta - low) / (high - low), 0.0, 1.0))


class TruncatedGaussianPrior(ParamPrior):
    """Independent Gaussians per coordinate, truncated to the box."""

    kind = "gaussian"

    def __init__(self, space: ParamSpace, mean: ArrayLike, std: ArrayLike) -> None:
        """Truncated Gaussian prior constructor."""
        self.space = space
        self.mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (space.dims,))
        self.std = np.broadcast_to(np.asarray(std, dtype=np.float64), (space.dims,))
        if np.any(self.std <= 0):
            raise ValueError("prior std must be positive")
        self._dist = stats.truncnorm(
            (space.lower - self.mean) / self.std,
            (space.upper - self.mean) / self.std,
            loc=self.mean,
            scale=self.std,
        )

    @property
    def dims(self) -> int:
        return self.space.dims

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.atleast_1d(self._dist.rvs(random_state=rng))

    def pdf(self, theta: ArrayLike) -> float:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if not self.space.contains(theta):
            return 0.0
        return float(np.prod(self._dist.pdf(theta)))

    def cdf(self, theta: float) -> float:
        if self.dims != 1:
            return super().cdf(theta)
        return float(np.atleast_1d(self._dist.cdf(theta))[0])


class GridPrior(ParamPrior):
    """Point masses on a finite set of parameter vectors."""

    kind = "grid"

    def __init__(self, points: ArrayLike, weights: ArrayLike | None = None) -> None:
        """Grid prior constructor; uniform weights by default."""
        points = np.asarray(points, dtype=np.float64)
        self.points = points.reshape(points.shape[0], -1)
        if weights is None:
            weights = np.full(self.points.shape[0], 1.0 / self.points.shape[0])
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (self.points.shape[0],) or np.any(self.weights < 0):
            raise ValueError("grid weights must be non-negative, one per point")
        self.weights = self.weights / self.weights.sum()

    @property
    def dims(self) -> int:
        return int(self.points.shape[1])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.points[rng.choice(self.points.shape[0], p=self.weights)].copy()

    def pdf(self, theta: ArrayLike) -> float:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        hits = np.all(self.points == theta, axis=1)
        return float(self.weights[hits].sum())


class ProductPrior(ParamPrior):
    """Independent priors for the stages of a composite operator."""

    kind = "product"

    def __init__(self, priors: Sequence[ParamPrior]) -> None:
        """Product prior constructor; priors follow the composite order."""
        self.priors = tuple(priors)
        self._offsets = np.cumsum([0] + [prior.dims for prior in self.priors])

    @property
    def dims(self) -> int:
        return int(self._offsets[-1])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return np.concatenate([prior.sample(rng) for prior in self.priors])

    def pdf(self, theta: ArrayLike) -> float:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        density = 1.0
        for prior, start, stop in zip(self.priors, self._offsets[:-1], self._offsets[1:]):
            density *= prior.pdf(theta[start:stop])
        return density


def sample_can(
    op: AugmentationOp,
    prior: ParamPrior,
    oracle: ConceptionOracle,
    x: ArrayLike,
    y: int,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    rng: np.random.Generator | None = None,
    fallback: bool = True,
    index: int = 0,
    copy: int = 0,
) -> AugmentedPair:
    """Draw one augmented copy of x from its consistency augmentation neighborhood.

    Parameters are drawn from ``prior`` and kept only when the oracle label
    of A(theta, x) equals ``y``. After ``max_attempts`` rejections the
    identity pair (x' = x) is returned with ``accepted=False`` unless
    ``fallback`` is off, in which case AcceptanceExhaustedError is raised.
    """
    x = np.asarray(x, dtype=np.float64)
    if max_attempts < 1:
        raise ValueError(f"max_attempts must be >= 1, got {max_attempts}")
    if oracle(x) != y:
        raise OracleMismatchError(f"sample {index}: oracle says {oracle(x)}, label is {y}")
    if rng is None:
        rng = np.random.default_rng()

    for attempt in range(1, max_attempts + 1):
        theta = prior.sample(rng)
        x_prime = op.apply(theta, x)
        if oracle(x_prime) == y:
            return AugmentedPair(x, y, x_prime, theta, attempt, index, copy, True)

    if not fallback:
        _LOGGER.error("Sample %d: acceptance exhausted after %d attempts", index, max_attempts)
        raise AcceptanceExhaustedError(index, max_attempts)

    _LOGGER.warning(
        "Sample %d: no parameter accepted after %d attempts, falling back to identity",
        index,
        max_attempts,
    )
    theta = op.identity.copy()
    return AugmentedPair(x, y, op.apply(theta, x), theta, max_attempts, index, copy, False)


def batch_augment(
    x: ArrayLike,
    y: ArrayLike,
    op: AugmentationOp,
    prior: ParamPrior,
    oracle: ConceptionOracle,
    copies: int,
    rng: np.random.Generator,
    max_attempts: int = DEFAULT_MAX_ATTEMPTS,
    fallback: bool = True,
) -> list[AugmentedPair]:
    """Draw ``copies`` augmented samples for each clean sample, grouped by index.

    Every clean sample gets its own stream seeded from (one draw of ``rng``,
    sample index), so the pairs do not depend on how the work is split.
    """
    if copies < 1:
        raise ValueError(f"copies per clean sample must be >= 1, got {copies}")
    if prior.dims != op.dims:
        raise ValueError(f"prior has {prior.dims} dimensions, {op.name} needs {op.dims}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    base = int(rng.integers(2**63))

    pairs: list[AugmentedPair] = []
    for index, (sample, label) in enumerate(zip(x, y)):
        stream = np.random.default_rng([base, index])
        for copy in range(copies):
            pairs.append(
                sample_can(
                    op,
                    prior,
                    oracle,
                    sample,
                    int(label),
                    max_attempts,
                    stream,
                    fallback,
                    index,
                    copy,
                )
            )
    _LOGGER.debug("Augmented %d clean samples x %d copies with %s", len(x), copies, op.name)
    return pairs


def acceptance_rate(pairs: Sequence[AugmentedPair]) -> float:
    """Return accepted draws divided by total proposals."""
    attempts = sum(pair.attempts for pair in pairs)
    accepted = sum(1 for pair in pairs if pair.accepted)
    return accepted / attempts if attempts else float("nan")


def _recover(
    op: AugmentationOp,
    prior: ParamPrior,
    oracle: ConceptionOracle,
    x: np.ndarray,
    x_prime: np.ndarray,
) -> tuple[np.ndarray, float] | None:
    """Return (theta, prior density) for x' in the CAN of x, None outside it."""
    if not op.has_inverse:
        raise NoInverseError(f"{op.name}: density evaluation needs a tractable inverse")
    if oracle(x_prime) != oracle(x):
        return None
    try:
        theta = op.invert(x_prime, x)
    except NotInImageError:
        return None
    density = prior.pdf(theta)
    if density == 0.0:
        return None
    return theta, density


def conditional_density(
    op: AugmentationOp,
    prior: ParamPrior,
    oracle: ConceptionOracle,
    x: ArrayLike,
    x_prime: ArrayLike,
) -> float:
    """Return the unnormalised p(x'|x): prior at h^-1(x') times the Jacobian factor.

    Zero outside the CAN of x.
    """
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    recovered = _recover(op, prior, oracle, x, x_prime)
    if recovered is None:
        return 0.0
    theta, density = recovered
    return density * op.jacobian_factor(theta, x)


def manifold_density(
    op: AugmentationOp,
    prior: ParamPrior,
    oracle: ConceptionOracle,
    x: ArrayLike,
    x_prime: ArrayLike,
) -> float:
    """Return the density of x' w.r.t. volume on the image manifold (untruncated).

    This is the change-of-variables density prior / Jacobian factor, which
    is what a histogram of sampled x' along the manifold measures.
    """
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    recovered = _recover(op, prior, oracle, x, x_prime)
    if recovered is None:
        return 0.0
    theta, density = recovered
    return density / op.jacobian_factor(theta, x)
