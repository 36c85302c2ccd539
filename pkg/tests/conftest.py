"""Shared fixtures for the shiftrisk test suite."""
from __future__ import annotations

import numpy as np
import pytest

from shiftrisk.augment import AdditiveShift, Rotation2D
from shiftrisk.cansample import HalfPlaneOracle, UniformBoxPrior
from shiftrisk.classifier import ProbModel
from shiftrisk.data import gen_blobs, gen_rings


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run Monte Carlo trend checks"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def rotation():
    return Rotation2D()


@pytest.fixture
def rotation_prior(rotation):
    return UniformBoxPrior(rotation.space)


@pytest.fixture
def halfplane():
    return HalfPlaneOracle(axis=0)


@pytest.fixture
def shift2d():
    return AdditiveShift(2, bound=0.3)


@pytest.fixture
def rings():
    return gen_rings(3, 40, seed=7)


@pytest.fixture
def blobs():
    return gen_blobs(3, 4, 30, separation=4.0, seed=3)


@pytest.fixture
def model2d():
    """Random 3-class model on the plane, scaled up so predictions are not uniform."""
    model = ProbModel(2, 3, widths=(6, 4), seed=11)
    model.set_flat(model.get_flat() * 3.0)
    return model
