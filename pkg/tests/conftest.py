import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cutsmc.model import AppendixCModel, GaussianConjugateModel, NormalCut, UniformCut

settings.register_profile(
    "cutsmc", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("cutsmc")


def testbed_model():
    """d=2, f=identity, sigma=sigma_p=1, y=(2,0), nu ~ N(0, 0.25 I)."""
    return GaussianConjugateModel([2.0, 0.0], 1.0, 1.0, cut=NormalCut([0.0, 0.0], scale=0.5))


@pytest.fixture
def testbed():
    return testbed_model()


@pytest.fixture
def appc():
    return AppendixCModel()


@pytest.fixture
def uniform_scalar_model():
    return GaussianConjugateModel([0.0], 1.0, 1.0, cut=UniformCut([0.0], [1.0]))
