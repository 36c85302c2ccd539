"""Parameterized augmentation operators and their composition."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
import logging
import math

import numpy as np
from numpy.typing import ArrayLike

from ..const import IMAGE_RESIDUAL_TOLERANCE, SINGULAR_GRAM_DET

_LOGGER = logging.getLogger(__name__)


class ParamOutOfRangeError(ValueError):
    """Raised when a parameter leaves the operator's parameter box."""


class DomainError(ValueError):
    """Raised when a sample lies outside the operator's input domain."""


class NotDifferentiableError(TypeError):
    """Raised when a Jacobian is requested from a discrete operator."""


class SingularJacobianError(ArithmeticError):
    """Raised when the Gram determinant of the parameter Jacobian vanishes."""


class NotInImageError(ValueError):
    """Raised when x' is not reachable from x under the operator."""


class NoInverseError(TypeError):
    """Raised when the operator has no tractable inverse."""


class EmptyCompositionError(ValueError):
    """Raised when composing an empty list of operators."""


def _frozen(values: ArrayLike) -> np.ndarray:
    """Return a read-only 1-D float64 copy."""
    array = np.atleast_1d(np.array(values, dtype=np.float64))
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ParamSpace:
    """Axis-aligned box holding the parameters of one operator."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        """Validate the box bounds."""
        lower = _frozen(self.lower)
        upper = _frozen(self.upper)
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise ValueError(
                f"box bounds must be equal-length vectors, got {lower.shape} and {upper.shape}"
            )
        if not np.all(lower < upper):
            bad = int(np.argmax(~(lower < upper)))
            raise ValueError(
                f"box needs lower < upper, got lower[{bad}]={lower[bad]} upper[{bad}]={upper[bad]}"
            )
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dims(self) -> int:
        """Return the dimension of the parameter space."""
        return int(self.lower.shape[0])

    @property
    def volume(self) -> float:
        """Return the Lebesgue volume of the box."""
        return float(np.prod(self.upper - self.lower))

    def contains(self, theta: np.ndarray) -> bool:
        """Return True when theta lies in the closed box."""
        return bool(np.all(self.lower <= theta) and np.all(theta <= self.upper))

    @classmethod
    def product(cls, spaces: Sequence[ParamSpace]) -> ParamSpace:
        """Return the Cartesian product of boxes in the given order."""
        return cls(
            np.concatenate([space.lower for space in spaces]),
            np.concatenate([space.upper for space in spaces]),
        )


class AugmentationOp:
    """Base representation of an augmentation map (theta, x) -> x'.

    Subclasses implement ``_apply`` and, when the parameter enters
    smoothly, ``_param_jacobian`` and ``_input_jacobian``. Operators with a
    closed-form parameter recovery implement ``_invert`` and set
    ``has_inverse``. Instances are immutable after construction.
    """

    name = "augmentation"
    has_inverse = False
    differentiable = True

    def __init__(self, space: ParamSpace, identity: ArrayLike) -> None:
        """Augmentation operator constructor."""
        self.space = space
        self.identity = _frozen(identity)
        if self.identity.shape != (space.dims,):
            raise ValueError(
                f"{self.name}: identity has shape {self.identity.shape}, box has {space.dims} dims"
            )
        if not space.contains(self.identity):
            raise ValueError(f"{self.name}: identity {self.identity} lies outside the box")

    def __repr__(self) -> str:
        """Return a short description."""
        return f"{type(self).__name__}(dims={self.space.dims})"

    @property
    def dims(self) -> int:
        """Return the parameter dimension d_i."""
        return self.space.dims

    def apply(self, theta: ArrayLike, x: ArrayLike) -> np.ndarray:
        """Return A(theta, x)."""
        theta = self._check_theta(theta)
        x = self._check_x(x)
        return self._apply(theta, x)

    def param_jacobian(self, theta: ArrayLike, x: ArrayLike) -> np.ndarray:
        """Return the n x d_i matrix of derivatives dA/dtheta."""
        self._require_differentiable()
        return self._param_jacobian(self._check_theta(theta), self._check_x(x))

    def input_jacobian(self, theta: ArrayLike, x: ArrayLike) -> np.ndarray:
        """Return the n x n matrix of derivatives dA/dx."""
        self._require_differentiable()
        return self._input_jacobian(self._check_theta(theta), self._check_x(x))

    def jacobian_factor(self, theta: ArrayLike, x: ArrayLike) -> float:
        """Return sqrt(det(J^T J)) for the parameter Jacobian J."""
        jac = self.param_jacobian(theta, x)
        gram = jac.T @ jac
        sign, log_det = np.linalg.slogdet(gram)
        if sign > 0:
            scale = gram.shape[0] * math.log(float(np.max(np.diag(gram))))
        if not (sign > 0 and log_det - scale > math.log(SINGULAR_GRAM_DET)):
            raise SingularJacobianError(
                f"{self.name}: Gram log-determinant {log_det:.3f} (sign {sign:+.0f})"
                f" at theta={np.asarray(theta)}"
            )
        return math.exp(0.5 * float(log_det))

    def invert(self, x_prime: ArrayLike, x: ArrayLike) -> np.ndarray:
        """Return the unique theta with A(theta, x) = x'."""
        if not self.has_inverse:
            raise NoInverseError(f"{self.name} has no tractable inverse")
        x = self._check_x(x)
        x_prime = np.asarray(x_prime, dtype=np.float64)
        if x_prime.shape != x.shape:
            raise NotInImageError(
                f"{self.name}: x' has shape {x_prime.shape}, x has shape {x.shape}"
            )
        theta = self._invert(x_prime, x)
        residual = float(np.max(np.abs(self._apply(theta, x) - x_prime), initial=0.0))
        if not residual <= IMAGE_RESIDUAL_TOLERANCE:
            raise NotInImageError(f"{self.name}: residual {residual:.3e} after inversion")
        if not self.space.contains(theta):
            raise NotInImageError(f"{self.name}: recovered theta {theta} outside the box")
        return theta

    def _check_theta(self, theta: ArrayLike) -> np.ndarray:
        """Validate a parameter vector against the box."""
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape != (self.space.dims,):
            raise ParamOutOfRangeError(
                f"{self.name}: expected {self.space.dims} parameters, got {theta.shape}"
            )
        if not np.all(np.isfinite(theta)) or not self.space.contains(theta):
            raise ParamOutOfRangeError(
                f"{self.name}: theta={theta} outside [{self.space.lower}, {self.space.upper}]"
            )
        return theta

    def _check_x(self, x: ArrayLike) -> np.ndarray:
        """Validate a sample vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise DomainError(f"{self.name}: samples must be finite vectors")
        return x

    def _require_differentiable(self) -> None:
        if not self.differentiable:
            raise NotDifferentiableError(f"{self.name} has a discrete parameter space")

    def _apply(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _param_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _input_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _invert(self, x_prime: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class CompositeOp(AugmentationOp):
    """Operators applied in a fixed composite order.

    The parameter vector is laid out in composite order, i.e.
    ``theta = (theta_{j_1}, ..., theta_{j_m})`` for ``order = (j_1, ..., j_m)``,
    and ``theta_{j_1}`` acts first.
    """

    has_inverse = False

    def __init__(self, ops: Sequence[AugmentationOp], order: Sequence[int]) -> None:
        """Composite operator constructor."""
        self.ops = tuple(ops)
        self.order = tuple(int(j) for j in order)
        self.stages = tuple(self.ops[j] for j in self.order)
        self.name = "+".join(stage.name for stage in self.stages)
        self.differentiable = all(stage.differentiable for stage in self.stages)
        self._offsets = np.cumsum([0] + [stage.dims for stage in self.stages])
        super().__init__(
            ParamSpace.product([stage.space for stage in self.stages]),
            np.concatenate([stage.identity for stage in self.stages]),
        )

    def __repr__(self) -> str:
        """Return a short description."""
        return f"CompositeOp({', '.join(repr(stage) for stage in self.stages)})"

    def split(self, theta: ArrayLike) -> list[np.ndarray]:
        """Return the per-stage parameter blocks in composite order."""
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        return [
            theta[start:stop] for start, stop in zip(self._offsets[:-1], self._offsets[1:])
        ]

    def _check_theta(self, theta: ArrayLike) -> np.ndarray:
        theta = super()._check_theta(theta)
        for stage, part in zip(self.stages, self.split(theta)):
            stage._check_theta(part)
        return theta

    def _check_x(self, x: ArrayLike) -> np.ndarray:
        return self.stages[0]._check_x(x)

    def _trajectory(self, theta: np.ndarray, x: np.ndarray) -> list[np.ndarray]:
        """Return the inputs seen by every stage plus the final output."""
        states = [x]
        for stage, part in zip(self.stages, self.split(theta)):
            current = stage._check_x(states[-1])
            states.append(stage._apply(part, current))
        return states

    def _apply(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self._trajectory(theta, x)[-1]

    def _param_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        states = self._trajectory(theta, x)
        parts = self.split(theta)
        blocks: list[np.ndarray] = [np.empty(0)] * len(self.stages)
        # Propagate d(output)/d(stage input) backwards through the chain.
        carry = np.eye(states[-1].shape[0])
        for k in reversed(range(len(self.stages))):
            stage = self.stages[k]
            blocks[k] = carry @ stage._param_jacobian(parts[k], states[k])
            carry = carry @ stage._input_jacobian(parts[k], states[k])
        return np.hstack(blocks)

    def _input_jacobian(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        states = self._trajectory(theta, x)
        carry = np.eye(x.shape[0])
        for stage, part, state in zip(self.stages, self.split(theta), states):
            carry = stage._input_jacobian(part, state) @ carry
        return carry


def compose(
    ops: Sequence[AugmentationOp], order: Sequence[int] | None = None
) -> CompositeOp:
    """Compose operators under a composite order (identity order by default)."""
    if not ops:
        raise EmptyCompositionError("cannot compose an empty list of operators")
    if order is None:
        order = range(len(ops))
    order = [int(j) for j in order]
    if sorted(order) != list(range(len(ops))):
        raise ValueError(f"order {order} is not a permutation of 0..{len(ops) - 1}")
    composite = CompositeOp(ops, order)
    _LOGGER.debug("Composed %s with order %s", composite.name, order)
    return composite
