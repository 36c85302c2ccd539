"""Augmentation operators with parameter spaces and Jacobians."""
from __future__ import annotations

from .operator import (
    AugmentationOp,
    CompositeOp,
    DomainError,
    EmptyCompositionError,
    NoInverseError,
    NotDifferentiableError,
    NotInImageError,
    ParamOutOfRangeError,
    ParamSpace,
    SingularJacobianError,
    compose,
)
from .ops import (
    OPERATORS,
    AdditiveShift,
    ColorAdjust,
    DiscreteFlip,
    Rotation2D,
    Scale,
    build_op,
    clamp_unit,
)

__all__ = [
    "AugmentationOp",
    "CompositeOp",
    "ParamSpace",
    "compose",
    "AdditiveShift",
    "ColorAdjust",
    "DiscreteFlip",
    "Rotation2D",
    "Scale",
    "OPERATORS",
    "build_op",
    "clamp_unit",
    "DomainError",
    "EmptyCompositionError",
    "NoInverseError",
    "NotDifferentiableError",
    "NotInImageError",
    "ParamOutOfRangeError",
    "SingularJacobianError",
]
