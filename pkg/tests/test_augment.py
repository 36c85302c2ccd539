"""Tests for augmentation operators, their Jacobians and composition."""
from __future__ import annotations

import math

import numpy as np
import pytest

from shiftrisk.augment import (
    AdditiveShift,
    ColorAdjust,
    DiscreteFlip,
    DomainError,
    EmptyCompositionError,
    NoInverseError,
    NotDifferentiableError,
    NotInImageError,
    ParamOutOfRangeError,
    ParamSpace,
    Rotation2D,
    Scale,
    build_op,
    clamp_unit,
    compose,
)
from shiftrisk.const import INVERSE_TOLERANCE


def fd_factor(op, theta, x, step=1e-5):
    """Gram factor from central finite differences of apply."""
    theta = np.asarray(theta, dtype=np.float64)
    columns = []
    for k in range(theta.shape[0]):
        plus, minus = theta.copy(), theta.copy()
        plus[k] += step
        minus[k] -= step
        columns.append((op.apply(plus, x) - op.apply(minus, x)) / (2 * step))
    jac = np.stack(columns, axis=1)
    return math.sqrt(np.linalg.det(jac.T @ jac))


class TestParamSpace:
    """Box parameter spaces."""

    def test_rejects_inverted_box(self):
        """lower must be strictly below upper, and the message names the index."""
        with pytest.raises(ValueError, match=r"lower\[1\]"):
            ParamSpace([0.0, 1.0], [1.0, 1.0])

    def test_identity_must_lie_in_box(self):
        """An operator whose identity is outside its box cannot be built."""
        with pytest.raises(ValueError, match="outside the box"):
            Rotation2D(lower=0.5, upper=1.0)

    def test_product_and_volume(self):
        """The product box concatenates bounds and multiplies volumes."""
        space = ParamSpace.product([ParamSpace([0.0], [2.0]), ParamSpace([-1.0], [0.5])])
        assert space.dims == 2
        assert space.volume == pytest.approx(3.0)
        assert space.contains(np.array([2.0, 0.5]))
        assert not space.contains(np.array([2.1, 0.0]))


class TestApply:
    """A(theta, x) on the shipped operators."""

    def test_rotation_identity(self, rotation):
        """theta = 0 leaves (1, 0) unchanged."""
        np.testing.assert_array_equal(rotation.apply([0.0], [1.0, 0.0]), [1.0, 0.0])

    def test_rotation_quarter_turn(self, rotation):
        """theta = pi/2 maps (1, 0) to (0, 1)."""
        quarter = rotation.apply([math.pi / 2], [1.0, 0.0])
        np.testing.assert_allclose(quarter, [0.0, 1.0], atol=1e-15)

    def test_color_direct_evaluation(self):
        """alpha + (1 + beta) v^gamma at (0.1, 0.5, 2), v = 0.5 is 0.475."""
        op = ColorAdjust()
        np.testing.assert_allclose(op.apply([0.1, 0.5, 2.0], [0.5]), [0.475], rtol=1e-15)

    def test_shift(self):
        """(1, 1) + (0.2, -0.1) = (1.2, 0.9)."""
        op = AdditiveShift(2, bound=0.5)
        np.testing.assert_allclose(op.apply([0.2, -0.1], [1.0, 1.0]), [1.2, 0.9], rtol=1e-15)

    def test_out_of_range_parameter(self, rotation):
        """A parameter outside the box is rejected."""
        with pytest.raises(ParamOutOfRangeError):
            rotation.apply([4.0], [1.0, 0.0])

    def test_color_rejects_non_positive_values(self):
        """ColorAdjust is defined on (0, 1] only."""
        with pytest.raises(DomainError):
            ColorAdjust().apply([0.0, 0.0, 1.0], [0.5, 0.0])

    def test_rotation_needs_even_dimension(self, rotation):
        """Rotation acts on coordinate pairs."""
        with pytest.raises(DomainError):
            rotation.apply([0.1], [1.0, 2.0, 3.0])

    def test_flip(self):
        """theta = 1 reverses each row, theta must be 0 or 1."""
        op = DiscreteFlip(width=2)
        np.testing.assert_array_equal(op.apply([1.0], [1.0, 2.0, 3.0, 4.0]), [2.0, 1.0, 4.0, 3.0])
        np.testing.assert_array_equal(op.apply([0.0], [1.0, 2.0]), [1.0, 2.0])
        with pytest.raises(ParamOutOfRangeError):
            op.apply([0.5], [1.0, 2.0])

    def test_identity_is_exact(self):
        """apply(identity, x) == x bit for bit over a random corpus."""
        rng = np.random.default_rng(0)
        ops = [Rotation2D(), AdditiveShift(4), Scale(), ColorAdjust(channels=2)]
        for _ in range(1000):
            x = clamp_unit(rng.uniform(0.0, 1.0, 4))
            for op in ops:
                np.testing.assert_array_equal(op.apply(op.identity, x), x)


class TestJacobianFactor:
    """sqrt(det(J^T J)) of the parameter Jacobian."""

    def test_shift_is_one(self, rng):
        """The shift Jacobian is the identity."""
        op = AdditiveShift(3)
        assert op.jacobian_factor(rng.uniform(-0.5, 0.5, 3), rng.normal(size=3)) == 1.0

    def test_rotation_unit_vector(self, rotation):
        """The tangent of a unit vector has norm 1."""
        assert rotation.jacobian_factor([1.3], [1.0, 0.0]) == pytest.approx(1.0, rel=1e-15)

    def test_rotation_three_four(self, rotation):
        """The tangent of (3, 4) has norm 5, matching finite differences."""
        factor = rotation.jacobian_factor([0.4], [3.0, 4.0])
        assert factor == pytest.approx(5.0, rel=1e-14)
        assert fd_factor(rotation, [0.4], np.array([3.0, 4.0])) == pytest.approx(5.0, rel=1e-4)

    def test_against_finite_differences(self):
        """Analytic factors match central differences on random (op, theta, x)."""
        rng = np.random.default_rng(1)
        ops = [
            Rotation2D(),
            AdditiveShift(2),
            Scale(),
            ColorAdjust(),
            compose([Rotation2D(), Scale()]),
            compose([Scale(), Rotation2D()], order=[1, 0]),
        ]
        for trial in range(100):
            op = ops[trial % len(ops)]
            if op.name == "color":
                theta = rng.uniform([-0.18, -0.45, 0.55], [0.18, 0.45, 1.8])
                x = rng.uniform(0.1, 1.0, 4)
            else:
                theta = rng.uniform(op.space.lower, op.space.upper) * 0.9
                x = rng.normal(size=2)
            analytic = op.jacobian_factor(theta, x)
            assert analytic == pytest.approx(fd_factor(op, theta, x), rel=1e-4)

    def test_extreme_scales(self):
        """Tiny or huge inputs scale the factor without being called singular."""
        op = compose([Rotation2D(), Scale()])
        theta = np.array([0.3, 0.2])
        x = np.array([0.6, -0.8])
        base = op.jacobian_factor(theta, x)
        assert op.jacobian_factor(theta, x * 1e-100) == pytest.approx(base * 1e-200, rel=1e-12)
        assert op.jacobian_factor(theta, x * 1e100) == pytest.approx(base * 1e200, rel=1e-12)

    def test_flip_is_not_differentiable(self):
        """Discrete operators have no Jacobian."""
        with pytest.raises(NotDifferentiableError):
            DiscreteFlip().jacobian_factor([1.0], [1.0, 2.0])


class TestInvert:
    """Parameter recovery h^-1(x')."""

    def test_shift(self):
        """Subtraction recovers the offset."""
        op = AdditiveShift(2, bound=0.5)
        np.testing.assert_allclose(op.invert([1.2, 0.9], [1.0, 1.0]), [0.2, -0.1], atol=1e-15)

    def test_rotation_round_trip(self, rotation):
        """invert(apply(theta, x), x) = theta within 1e-9."""
        rng = np.random.default_rng(2)
        for _ in range(100):
            theta = rng.uniform(-3.1, 3.1)
            x = rng.normal(size=4)
            recovered = rotation.invert(rotation.apply([theta], x), x)
            assert abs(recovered[0] - theta) <= INVERSE_TOLERANCE

    def test_round_trip_all_invertible(self):
        """Every invertible operator recovers its parameter within 1e-9."""
        rng = np.random.default_rng(3)
        for op in (AdditiveShift(3), Scale()):
            for _ in range(100):
                theta = rng.uniform(op.space.lower, op.space.upper)
                x = rng.normal(size=3)
                recovered = op.invert(op.apply(theta, x), x)
                np.testing.assert_allclose(recovered, theta, atol=INVERSE_TOLERANCE)

    def test_scale_identity(self):
        """x' = x recovers log-scale 0."""
        assert Scale().invert([1.5, -2.0], [1.5, -2.0])[0] == 0.0

    def test_not_in_image(self, rotation):
        """A point off the orbit of x is rejected."""
        with pytest.raises(NotInImageError):
            rotation.invert([2.0, 0.0], [1.0, 0.0])

    def test_no_inverse(self):
        """ColorAdjust has no tractable inverse."""
        with pytest.raises(NoInverseError):
            ColorAdjust().invert([0.5], [0.5])


class TestCompose:
    """Composite operators under a composite order."""

    def test_identity_map(self):
        """A single shift at theta = 0 is the identity."""
        op = compose([AdditiveShift(3)])
        x = np.array([0.3, -1.0, 2.0])
        np.testing.assert_array_equal(op.apply(op.identity, x), x)

    def test_rotation_then_shift(self):
        """Rotate (1, 0) by pi/2, then shift by (1, 0): (1, 1)."""
        op = compose([Rotation2D(), AdditiveShift(2, bound=1.0)])
        np.testing.assert_allclose(
            op.apply([math.pi / 2, 1.0, 0.0], [1.0, 0.0]), [1.0, 1.0], atol=1e-15
        )

    def test_order_matters(self):
        """Shift first, then rotate: (1, 0) -> (2, 0) -> (0, 2)."""
        op = compose([Rotation2D(), AdditiveShift(2, bound=1.0)], order=[1, 0])
        assert [stage.name for stage in op.stages] == ["shift", "rotation"]
        np.testing.assert_allclose(
            op.apply([1.0, 0.0, math.pi / 2], [1.0, 0.0]), [0.0, 2.0], atol=1e-15
        )

    def test_equals_nested_chain(self):
        """The composite equals the explicit nested application, bit for bit."""
        rng = np.random.default_rng(4)
        rotation, scale, shift = Rotation2D(), Scale(), AdditiveShift(2)
        op = compose([rotation, scale, shift], order=[2, 0, 1])
        for _ in range(100):
            theta = rng.uniform(op.space.lower, op.space.upper)
            x = rng.normal(size=2)
            t_shift, t_rot, t_scale = op.split(theta)
            nested = scale.apply(t_scale, rotation.apply(t_rot, shift.apply(t_shift, x)))
            np.testing.assert_array_equal(op.apply(theta, x), nested)

    def test_empty(self):
        """An empty composition is rejected."""
        with pytest.raises(EmptyCompositionError):
            compose([])

    def test_bad_order(self):
        """The order must be a permutation."""
        with pytest.raises(ValueError, match="permutation"):
            compose([Scale(), Scale()], order=[0, 0])


class TestColorNonClosure:
    """Two tone curves in a row are not one tone curve."""

    @pytest.mark.parametrize(
        "first, second",
        [
            ((0.1, 0.2, 0.5), (0.15, -0.3, 2.0)),
            ((0.2, 0.5, 1.5), (0.05, 0.1, 0.6)),
            ((0.05, -0.4, 2.0), (0.2, 0.3, 0.5)),
        ],
    )
    def test_no_single_adjustment(self, first, second):
        """The best single fit leaves a residual above 1e-6."""
        op = ColorAdjust()
        values = np.linspace(0.05, 1.0, 16)
        composed = op.apply(second, op.apply(first, values))
        _, rms = ColorAdjust.fit_single(values, composed)
        assert rms > 1e-6

    def test_fit_recovers_single_adjustment(self):
        """A target produced by one adjustment is fitted exactly."""
        values = np.linspace(0.05, 1.0, 16)
        target = ColorAdjust().apply([0.1, 0.2, 1.5], values)
        params, rms = ColorAdjust.fit_single(values, target)
        assert rms < 1e-9
        np.testing.assert_allclose(params, [0.1, 0.2, 1.5], atol=1e-6)


class TestBuildOp:
    """Operator registry."""

    def test_known_names(self):
        """Registered names build the matching classes."""
        assert isinstance(build_op("rotation"), Rotation2D)
        assert build_op("shift", dims=3).dims == 3

    def test_unknown_name(self):
        """Unknown operators are rejected with the choices listed."""
        with pytest.raises(ValueError, match="rotation"):
            build_op("crop")
