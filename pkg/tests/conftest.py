"""Shared fixtures: small truth models and parameter grids."""

from dataclasses import replace

import numpy as np
import pytest

from genro_rb.truth import angle_grid, assemble_truth


@pytest.fixture(scope="session")
def coercive_model():
    """Truth model at h = 1/8, eps = 1, square pairing (N_U = N_V = 49)."""
    return assemble_truth(1 / 8, 1.0)


@pytest.fixture(scope="session")
def convective_model():
    """Truth model at h = 1/8, eps = 2^-5."""
    return assemble_truth(1 / 8, 2.0**-5)


@pytest.fixture(scope="session")
def tiny_model():
    """Truth model at h = 1/4, eps = 2^-3 (N_U = N_V = 9)."""
    return assemble_truth(1 / 4, 2.0**-3)


@pytest.fixture(scope="session")
def refined_model():
    """Truth model at h = 1/4 with the test space on the refined mesh (N_V = 49)."""
    return assemble_truth(1 / 4, 2.0**-2, test_refinement=1)


@pytest.fixture
def frozen_model(coercive_model):
    """Coercive model whose affine coefficients ignore the angle."""
    return replace(coercive_model, theta=lambda p: np.array([p.epsilon, 1.0, 0.0, 1.0]))


@pytest.fixture
def rng():
    """Seeded random generator."""
    return np.random.default_rng(20240613)


@pytest.fixture
def coarse_grid(convective_model):
    """16 angles at the convective epsilon."""
    return angle_grid(16, convective_model.epsilon)
