"""Shared fixtures for memlab tests."""

import numpy as np
import pytest

from src.experiments.equivalence import random_stream
from src.memory.arch import init_memory


@pytest.fixture
def rng():
    """Seeded generator; each test gets a fresh one."""
    return np.random.default_rng(1234)


@pytest.fixture
def stream(rng):
    """Twelve tokens with unit keys in 4 dimensions and 3-dimensional values."""
    return random_stream(rng, 12, 4, 3)


@pytest.fixture
def matrix_memory():
    """Zero 3 x 4 matrix memory."""
    return init_memory("matrix", 4, 3)
