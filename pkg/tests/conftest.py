import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from conetree.operators import build_adjacency
from conetree.tree import SubstitutionMatrix

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def m_example():
    """Two labels, three children at label 1 and two at label 2."""
    return SubstitutionMatrix.from_array([[2, 1], [1, 1]])


@pytest.fixture
def m_quartic():
    return SubstitutionMatrix.from_array([[1, 2], [1, 1]])


@pytest.fixture
def m_three_bands():
    return SubstitutionMatrix.from_array([[1, 42], [1, 1]])


@pytest.fixture
def m_binary():
    return SubstitutionMatrix.from_array([[2]])


@pytest.fixture
def adj_quartic(m_quartic):
    return build_adjacency(m_quartic)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

