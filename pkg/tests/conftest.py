"""Shared fixtures."""

import os

import numpy as np
import pytest

from cvlab.core.config import reload_settings
from cvlab.core.dataset import (
    BernoulliLabelsSpec,
    LinearModelSpec,
    PiecewiseConstantDensitySpec,
    generate,
)


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Every test starts from default settings."""
    for name in list(os.environ):
        if name.startswith("CVLAB_"):
            monkeypatch.delenv(name, raising=False)
    reload_settings()
    yield
    reload_settings()


@pytest.fixture
def step_density():
    return PiecewiseConstantDensitySpec(breakpoints=[0.0, 0.5, 1.0], densities=[1.5, 0.5])


@pytest.fixture
def linear_model():
    return LinearModelSpec(beta_star=[1.0, -2.0, 0.5], sigma=0.5, x_law="normal")


@pytest.fixture
def bernoulli():
    return BernoulliLabelsSpec(p1=0.9)


@pytest.fixture
def density_sample(step_density):
    return generate(step_density, 40, seed=7)


@pytest.fixture
def regression_sample(linear_model):
    return generate(linear_model, 30, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
