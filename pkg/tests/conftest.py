"""Shared fixtures for the BlockMC Lab test suite."""
from __future__ import annotations

import numpy as np
import pytest

from model import sample_haar_basis


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def haar_factors():
    """Return a factory for (U, V) pairs; V is U in the symmetric case."""

    def make(n: int, seed: int, symmetric: bool = True):
        generator = np.random.default_rng(seed)
        U = sample_haar_basis(n, n, generator)
        V = U if symmetric else sample_haar_basis(n, n, generator)
        return U, V

    return make
