"""Concrete augmentation operators on feature vectors."""
from __future__ import annotations

import logging
import math
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import least_squares

from ..const import FULL_CIRCLE, UNIT_CLAMP_LOW
from .operator import (
    AugmentationOp,
    DomainError,
    NotInImageError,
    ParamOutOfRangeError,
    ParamSpace,
)

_LOGGER = logging.getLogger(__name__)


def clamp_unit(x: ArrayLike) -> np.ndarray:
    """Clamp values into (0, 1] so that ColorAdjust is defined on them."""
    return np.clip(np.asarray(x, dtype=np.float64), UNIT_CLAMP_LOW, 1.0)


class Rotation2D(AugmentationOp):
    """Rotation by one angle, applied to every consecutive coordinate pair."""

    name = "rotation"
    has_inverse = True

    def __init__(self, lower: float = FULL_CIRCLE[0], upper: float = FULL_CIRCLE[1]) -> None:
        """Rotation constructor."""
        super().__init__(ParamSpace([lower], [upper]), [0.0])

    def _check_x(self, x: ArrayLike) -> np.ndarray:
        x = super()._check_x(x)
        if x.shape[0] % 2:
            raise DomainError(f"rotation needs an even dimension, got {x.shape[0]}")
        return x

    def _apply(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        cos, sin = math.cos(theta[0]), math.sin(theta[0])
        blocks = x.reshape(-1, 2)
        out = np.empty_like(blocks)
        out[:, 0] = cos * blocks[:, 0] - sin * blocks[:, 1]
        out[:, 1] = sin * blocks[:, 0] + cos * blocks[:, 1]
        return out.reshape(-1)

    def _param_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        cos, sin = math.cos(theta[0]), math.sin(theta[0])
        blocks = x.reshape(-1, 2)
        out = np.empty_like(blocks)
        out[:, 0] = -sin * blocks[:, 0] - cos * blocks[:, 1]
        out[:, 1] = cos * blocks[:, 0] - sin * blocks[:, 1]
        return out.reshape(-1, 1)

    def _input_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        cos, sin = math.cos(theta[0]), math.sin(theta[0])
        block = np.array([[cos, -sin], [sin, cos]])
        return np.kron(np.eye(x.shape[0] // 2), block)

    def _invert(self, x_prime: np.ndarray, x: np.ndarray) -> np.ndarray:
        blocks = x.reshape(-1, 2)
        rotated = x_prime.reshape(-1, 2)
        # The angle is read off the longest block, where atan2 is best conditioned.
        ref = int(np.argmax(np.hypot(blocks[:, 0], blocks[:, 1])))
        a, b = blocks[ref]
        a_prime, b_prime = rotated[ref]
        if a == 0.0 and b == 0.0:
            if np.any(x_prime):
                raise NotInImageError("rotation of the zero vector is the zero vector")
            return np.zeros(1)
        return np.array([math.atan2(a * b_prime - b * a_prime, a * a_prime + b * b_prime)])


class AdditiveShift(AugmentationOp):
    """Translation x + theta inside a box of offsets."""

    name = "shift"
    has_inverse = True

    def __init__(
        self,
        dims: int,
        bound: float = 0.5,
        lower: ArrayLike | None = None,
        upper: ArrayLike | None = None,
    ) -> None:
        """Shift constructor; the box defaults to [-bound, bound]^dims."""
        lower = np.full(dims, -bound) if lower is None else np.broadcast_to(lower, (dims,))
        upper = np.full(dims, bound) if upper is None else np.broadcast_to(upper, (dims,))
        super().__init__(ParamSpace(lower, upper), np.zeros(dims))

    def _check_x(self, x: ArrayLike) -> np.ndarray:
        x = super()._check_x(x)
        if x.shape[0] != self.dims:
            raise DomainError(f"shift acts on {self.dims}-vectors, got {x.shape[0]}")
        return x

    def _apply(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return x + theta

    def _param_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.eye(self.dims)

    def _input_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return np.eye(self.dims)

    def _invert(self, x_prime: np.ndarray, x: np.ndarray) -> np.ndarray:
        return x_prime - x


class Scale(AugmentationOp):
    """Isotropic scaling exp(theta) * x."""

    name = "scale"
    has_inverse = True

    def __init__(self, bound: float = 0.3) -> None:
        """Scale constructor; log-scale box [-bound, bound]."""
        super().__init__(ParamSpace([-bound], [bound]), [0.0])

    def _apply(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return math.exp(theta[0]) * x

    def _param_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return (math.exp(theta[0]) * x).reshape(-1, 1)

    def _input_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return math.exp(theta[0]) * np.eye(x.shape[0])

    def _invert(self, x_prime: np.ndarray, x: np.ndarray) -> np.ndarray:
        norm_sq = float(x @ x)
        if norm_sq == 0.0:
            raise DomainError("scale cannot be inverted at x = 0")
        ratio = float(x_prime @ x) / norm_sq
        if ratio <= 0.0:
            raise NotInImageError(f"x' is not a positive multiple of x (ratio={ratio})")
        return np.array([math.log(ratio)])


class ColorAdjust(AugmentationOp):
    """Per-channel tone curve v -> alpha + (1 + beta) * v ** gamma.

    Samples are laid out channel-major: ``x.reshape(channels, -1)`` gives
    one row of pixel values per channel, all in (0, 1]. Parameters are
    ``(alpha, beta, gamma)`` per channel. The family is not closed under
    composition, so it is not a group action.
    """

    name = "color"

    def __init__(
        self,
        channels: int = 1,
        lower: ArrayLike = (-0.2, -0.5, 0.5),
        upper: ArrayLike = (0.2, 0.5, 2.0),
    ) -> None:
        """Color adjustment constructor; bounds are per (alpha, beta, gamma)."""
        self.channels = channels
        super().__init__(
            ParamSpace(np.tile(lower, channels), np.tile(upper, channels)),
            np.tile([0.0, 0.0, 1.0], channels),
        )

    def _check_x(self, x: ArrayLike) -> np.ndarray:
        x = super()._check_x(x)
        if x.shape[0] % self.channels:
            raise DomainError(
                f"color expects a multiple of {self.channels} values, got {x.shape[0]}"
            )
        if np.any(x <= 0.0):
            raise DomainError("color values must be positive; clamp with clamp_unit first")
        return x

    def _params(self, theta: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        params = theta.reshape(self.channels, 3)
        return params[:, :1], params[:, 1:2], params[:, 2:]

    def _apply(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        alpha, beta, gamma = self._params(theta)
        values = x.reshape(self.channels, -1)
        return (alpha + (1.0 + beta) * values**gamma).reshape(-1)

    def _param_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        _, beta, gamma = self._params(theta)
        values = x.reshape(self.channels, -1)
        powered = values**gamma
        pixels = values.shape[1]
        jac = np.zeros((x.shape[0], 3 * self.channels))
        for channel in range(self.channels):
            rows = slice(channel * pixels, (channel + 1) * pixels)
            jac[rows, 3 * channel] = 1.0
            jac[rows, 3 * channel + 1] = powered[channel]
            jac[rows, 3 * channel + 2] = (
                (1.0 + beta[channel, 0]) * powered[channel] * np.log(values[channel])
            )
        return jac

    def _input_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        _, beta, gamma = self._params(theta)
        values = x.reshape(self.channels, -1)
        return np.diag(((1.0 + beta) * gamma * values ** (gamma - 1.0)).reshape(-1))

    @staticmethod
    def fit_single(values: ArrayLike, target: ArrayLike) -> tuple[np.ndarray, float]:
        """Fit one (alpha, beta, gamma) mapping values onto target.

        Returns the fitted parameters and the RMS residual; a residual far
        from zero means no single adjustment reproduces the target.
        """
        values = np.asarray(values, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)

        def residual(params: np.ndarray) -> np.ndarray:
            return params[0] + (1.0 + params[1]) * values ** params[2] - target

        fit = least_squares(residual, x0=[0.0, 0.0, 1.0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
        rms = float(np.sqrt(np.mean(fit.fun**2)))
        _LOGGER.debug("Single color fit %s, rms residual %.3e", fit.x, rms)
        return fit.x, rms


class DiscreteFlip(AugmentationOp):
    """Reversal of each row of width ``width`` (whole vector by default).

    The parameter takes the values 0 (identity) and 1 (flip) only, so the
    operator is not differentiable in its parameter and has no Jacobian.
    """

    name = "flip"
    differentiable = False

    def __init__(self, width: int | None = None) -> None:
        """Flip constructor."""
        self.width = width
        super().__init__(ParamSpace([0.0], [1.0]), [0.0])

    def _check_theta(self, theta: ArrayLike) -> np.ndarray:
        theta = super()._check_theta(theta)
        if theta[0] not in (0.0, 1.0):
            raise ParamOutOfRangeError(f"flip parameter must be 0 or 1, got {theta[0]}")
        return theta

    def _check_x(self, x: ArrayLike) -> np.ndarray:
        x = super()._check_x(x)
        if self.width and x.shape[0] % self.width:
            raise DomainError(f"flip rows have width {self.width}, got {x.shape[0]} values")
        return x

    def _apply(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        if theta[0] == 0.0:
            return x.copy()
        width = self.width or x.shape[0]
        return x.reshape(-1, width)[:, ::-1].reshape(-1)


OPERATORS: dict[str, type[AugmentationOp]] = {
    "rotation": Rotation2D,
    "shift": AdditiveShift,
    "scale": Scale,
    "color": ColorAdjust,
    "flip": DiscreteFlip,
}


def build_op(name: str, **options: Any) -> AugmentationOp:
    """Return the operator registered under name."""
    try:
        factory = OPERATORS[name]
    except KeyError:
        raise ValueError(
            f"unknown operator {name!r}; choose one of {', '.join(OPERATORS)}"
        ) from None
    return factory(**options)
