"""Softmax classifier q_phi(y|x) = softmax(W^T [h(x); 1]) with exact gradients."""
from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass
import logging
import math
from pathlib import Path
import struct

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import expit, logsumexp, softmax

from .const import (
    DEFAULT_ACTIVATION,
    DEFAULT_WIDTHS,
    GRADIENT_DENOM_FLOOR,
    GRADIENT_STEP,
)
from .models import GradientReport

_LOGGER = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"SHFTRSK\x00"
CHECKPOINT_VERSION = 1
CHECKPOINT_PREFIX = struct.Struct("<8sII")
ACTIVATIONS = ("tanh", "softplus")


class NonFiniteGradientError(ArithmeticError):
    """Raised when a gradient component is NaN or infinite."""


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint file is malformed."""


@dataclass
class NLLTerms:
    """Weighted sum of negative log-likelihoods, sum_k w_k * -log q(y_k|x_k)."""

    x: np.ndarray
    y: np.ndarray
    weights: np.ndarray

    @classmethod
    def mean(cls, x: ArrayLike, y: ArrayLike, scale: float = 1.0) -> NLLTerms:
        """Return scale times the mean NLL over the rows of x."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
        return cls(x, y, np.full(x.shape[0], scale / x.shape[0]))

    @classmethod
    def concat(cls, parts: Sequence[NLLTerms]) -> NLLTerms:
        """Join several weighted sums, dropping zero-weight terms."""
        x = np.concatenate([part.x for part in parts])
        y = np.concatenate([part.y for part in parts])
        weights = np.concatenate([part.weights for part in parts])
        keep = weights != 0.0
        return cls(x[keep], y[keep], weights[keep])


LossFn = Callable[[], NLLTerms]


class ProbModel:
    """Multilayer perceptron features h(x) followed by a linear softmax head.

    The head has D + 1 rows: the last one multiplies a constant feature 1
    and plays the role of the bias.
    """

    def __init__(
        self,
        input_dim: int,
        num_classes: int,
        widths: Sequence[int] = DEFAULT_WIDTHS,
        activation: str = DEFAULT_ACTIVATION,
        seed: int = 0,
    ) -> None:
        """Probabilistic model constructor; uniform(+-1/sqrt(fan_in)) initialisation."""
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {activation!r}")
        if num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {num_classes}")
        self.input_dim = int(input_dim)
        self.num_classes = int(num_classes)
        self.widths = tuple(int(width) for width in widths)
        self.activation = activation
        self.seed = seed

        rng = np.random.default_rng(seed)
        self.layers: list[tuple[np.ndarray, np.ndarray]] = []
        fan_in = self.input_dim
        for width in self.widths:
            bound = 1.0 / math.sqrt(fan_in)
            self.layers.append(
                (rng.uniform(-bound, bound, (fan_in, width)), rng.uniform(-bound, bound, width))
            )
            fan_in = width
        bound = 1.0 / math.sqrt(fan_in)
        self.head = rng.uniform(-bound, bound, (fan_in + 1, self.num_classes))

    @property
    def feature_dim(self) -> int:
        """Return D, the number of learned features (bias excluded)."""
        return self.widths[-1] if self.widths else self.input_dim

    def params(self) -> list[np.ndarray]:
        """Return the parameter arrays in flattening order."""
        arrays: list[np.ndarray] = []
        for weight, bias in self.layers:
            arrays.extend((weight, bias))
        arrays.append(self.head)
        return arrays

    @property
    def num_params(self) -> int:
        """Return the length of the flat parameter vector."""
        return sum(array.size for array in self.params())

    def get_flat(self) -> np.ndarray:
        """Return a copy of phi as one flat vector."""
        return np.concatenate([array.ravel() for array in self.params()])

    def set_flat(self, flat: ArrayLike) -> None:
        """Overwrite phi from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {flat.shape}")
        offset = 0
        for array in self.params():
            array[...] = flat[offset : offset + array.size].reshape(array.shape)
            offset += array.size

    def decay_mask(self) -> np.ndarray:
        """Return 1 for decayed entries (weights) and 0 for biases and the bias row."""
        parts: list[np.ndarray] = []
        for weight, bias in self.layers:
            parts.extend((np.ones(weight.size), np.zeros(bias.size)))
        head = np.ones_like(self.head)
        head[-1] = 0.0
        parts.append(head.ravel())
        return np.concatenate(parts)

    def clone(self) -> ProbModel:
        """Return an independent copy with the same parameters."""
        twin = ProbModel(self.input_dim, self.num_classes, self.widths, self.activation, self.seed)
        twin.set_flat(self.get_flat())
        return twin

    def _activate(self, z: np.ndarray) -> np.ndarray:
        if self.activation == "tanh":
            return np.tanh(z)
        return np.logaddexp(0.0, z)

    def _activate_grad(self, z: np.ndarray, a: np.ndarray) -> np.ndarray:
        if self.activation == "tanh":
            return 1.0 - a * a
        return expit(z)

    def _forward(self, x: np.ndarray) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
        """Return the per-layer (pre, post) activations and the logits."""
        cache: list[tuple[np.ndarray, np.ndarray]] = []
        hidden = x
        for weight, bias in self.layers:
            pre = hidden @ weight + bias
            post = self._activate(pre)
            cache.append((pre, post))
            hidden = post
        logits = hidden @ self.head[:-1] + self.head[-1]
        return cache, logits

    def features(self, x: ArrayLike) -> np.ndarray:
        """Return h(x) for a batch (B x D)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        cache, _ = self._forward(x)
        return cache[-1][1] if cache else x

    def logits(self, x: ArrayLike) -> np.ndarray:
        """Return the logits w_i^T h(x) + bias_i for a batch (B x l)."""
        return self._forward(np.atleast_2d(np.asarray(x, dtype=np.float64)))[1]

    def log_probs(self, x: ArrayLike) -> np.ndarray:
        """Return log q(y_i|x) for every class, via log-sum-exp."""
        logits = self.logits(x)
        return logits - logsumexp(logits, axis=1, keepdims=True)

    def naive_log_probs(self, x: ArrayLike) -> np.ndarray:
        """Return log q(y_i|x) by exponentiating and normalising (reference path)."""
        expz = np.exp(self.logits(x))
        return np.log(expz / expz.sum(axis=1, keepdims=True))

    def log_q(self, x: ArrayLike, y: ArrayLike) -> np.ndarray | float:
        """Return log q(y|x); scalar for a single sample, vector for a batch."""
        single = np.asarray(x).ndim == 1
        y = np.atleast_1d(np.asarray(y, dtype=np.int64))
        if np.any((y < 0) | (y >= self.num_classes)):
            raise ValueError(f"labels must lie in 0..{self.num_classes - 1}")
        values = self.log_probs(x)[np.arange(y.shape[0]), y]
        return float(values[0]) if single else values

    def feature_densities(self, x: ArrayLike, d: int) -> np.ndarray:
        """Return q(y_i|h_d(x)) over classes for feature d (one row per sample)."""
        if not 0 <= d < self.feature_dim:
            raise IndexError(f"feature index {d} outside 0..{self.feature_dim - 1}")
        h_d = self.features(x)[:, d]
        return softmax(h_d[:, None] * self.head[d][None, :], axis=1)

    def predict(self, x: ArrayLike) -> np.ndarray:
        """Return the most probable class per row."""
        return np.argmax(self.logits(x), axis=1)

    def accuracy(self, x: ArrayLike, y: ArrayLike) -> float:
        """Return the fraction of rows classified correctly."""
        return float(np.mean(self.predict(x) == np.asarray(y)))

    def value(self, terms: NLLTerms) -> float:
        """Return sum_k w_k * -log q(y_k|x_k)."""
        if terms.x.shape[0] == 0:
            return 0.0
        nll = -self.log_probs(terms.x)[np.arange(terms.y.shape[0]), terms.y]
        return float(terms.weights @ nll)

    def value_and_grad(self, terms: NLLTerms) -> tuple[float, np.ndarray]:
        """Return the weighted NLL and its gradient with respect to phi."""
        if terms.x.shape[0] == 0:
            return 0.0, np.zeros(self.num_params)
        cache, logits = self._forward(terms.x)
        rows = np.arange(terms.y.shape[0])
        log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
        value = float(terms.weights @ -log_probs[rows, terms.y])

        d_logits = np.exp(log_probs)
        d_logits[rows, terms.y] -= 1.0
        d_logits *= terms.weights[:, None]

        hidden = cache[-1][1] if cache else terms.x
        d_head = np.vstack([hidden.T @ d_logits, d_logits.sum(axis=0)])
        d_hidden = d_logits @ self.head[:-1].T

        grads: list[np.ndarray] = [d_head]
        for k in reversed(range(len(self.layers))):
            weight, _ = self.layers[k]
            pre, post = cache[k]
            d_pre = d_hidden * self._activate_grad(pre, post)
            below = cache[k - 1][1] if k > 0 else terms.x
            grads.append(d_pre.sum(axis=0))
            grads.append(below.T @ d_pre)
            d_hidden = d_pre @ weight.T
        grads.reverse()
        return value, np.concatenate([grad.ravel() for grad in grads])


def log_q(model: ProbModel, x: ArrayLike, y: int) -> float:
    """Return log q_phi(y|x) for one sample."""
    return float(model.log_q(np.asarray(x, dtype=np.float64), y))


def feature_density(model: ProbModel, x: ArrayLike, d: int, y: int) -> float:
    """Return q_phi(y|h_d(x)), the softmax of feature d alone."""
    return float(model.feature_densities(np.asarray(x, dtype=np.float64), d)[0, y])


def grad_loss(model: ProbModel, loss_fn: LossFn) -> GradientReport:
    """Return the loss and its exact gradient at the current parameters."""
    loss, grad = model.value_and_grad(loss_fn())
    if not np.all(np.isfinite(grad)):
        bad = int(np.argmax(~np.isfinite(grad)))
        raise NonFiniteGradientError(f"gradient component {bad} is {grad[bad]}")
    return GradientReport(loss, grad)


def check_gradient(
    model: ProbModel, loss_fn: LossFn, step: float = GRADIENT_STEP
) -> GradientReport:
    """Compare the analytic gradient against central finite differences.

    The relative error of a component is |a - f| / max(|a|, |f|, floor);
    the report carries the maximum over all components.
    """
    report = grad_loss(model, loss_fn)
    terms = loss_fn()
    origin = model.get_flat()
    numeric = np.zeros_like(origin)
    probe = origin.copy()
    try:
        for i in range(origin.shape[0]):
            probe[i] = origin[i] + step
            model.set_flat(probe)
            f_plus = model.value(terms)
            probe[i] = origin[i] - step
            model.set_flat(probe)
            f_minus = model.value(terms)
            numeric[i] = 0.5 * (f_plus - f_minus) / step
            probe[i] = origin[i]
    finally:
        model.set_flat(origin)

    denom = np.maximum(np.maximum(np.abs(report.grad), np.abs(numeric)), GRADIENT_DENOM_FLOOR)
    report.finite_diff_max_rel_err = float(np.max(np.abs(report.grad - numeric) / denom))
    _LOGGER.debug(
        "Gradient check over %d parameters: max rel err %.3e",
        origin.shape[0],
        report.finite_diff_max_rel_err,
    )
    return report


def save_checkpoint(model: ProbModel, path: str | Path) -> None:
    """Write the flat parameters with a shape header, little-endian float64."""
    header = struct.pack(
        f"<IIII{len(model.widths)}I",
        model.input_dim,
        model.num_classes,
        ACTIVATIONS.index(model.activation),
        len(model.widths),
        *model.widths,
    )
    prefix = CHECKPOINT_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header))
    payload = model.get_flat().astype("<f8").tobytes()
    Path(path).write_bytes(prefix + header + payload)
    _LOGGER.debug("Wrote checkpoint %s (%d parameters)", path, model.num_params)


def load_checkpoint(path: str | Path) -> ProbModel:
    """Read a checkpoint written by save_checkpoint."""
    data = Path(path).read_bytes()
    if len(data) < CHECKPOINT_PREFIX.size:
        raise CheckpointFormatError(
            f"{path}: shorter than the {CHECKPOINT_PREFIX.size}-byte prefix"
        )
    magic, version, header_len = CHECKPOINT_PREFIX.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    start = CHECKPOINT_PREFIX.size
    if len(data) < start + header_len or header_len < 16:
        raise CheckpointFormatError(f"{path}: truncated header")
    input_dim, num_classes, activation, depth = struct.unpack_from("<IIII", data, start)
    if activation >= len(ACTIVATIONS) or header_len != 16 + 4 * depth:
        raise CheckpointFormatError(f"{path}: inconsistent header")
    widths = struct.unpack_from(f"<{depth}I", data, start + 16)
    model = ProbModel(input_dim, num_classes, widths, ACTIVATIONS[activation])
    payload = data[start + header_len :]
    if len(payload) != 8 * model.num_params:
        raise CheckpointFormatError(
            f"{path}: payload holds {len(payload)} bytes, expected {8 * model.num_params}"
        )
    model.set_flat(np.frombuffer(payload, dtype="<f8"))
    return model
