import numpy as np
import pytest

from bcdiup.crystal import CrystalSpec, PhaseModel, build_crystal, ground_truth_intensity


@pytest.fixture(scope="session")
def default_crystal():
    return build_crystal(CrystalSpec())


@pytest.fixture(scope="session")
def default_intensity(default_crystal):
    return ground_truth_intensity(default_crystal)


@pytest.fixture(scope="session")
def small_crystal():
    """6x6x4 box in a 32x32x16 array, mild phase bump."""
    spec = CrystalSpec(
        array_dims=(32, 32, 16),
        box_dims=(6, 6, 4),
        phase=PhaseModel("gaussian-bump", amplitude=0.8, length_scale=3.0),
        seed=5,
    )
    return build_crystal(spec)


@pytest.fixture(scope="session")
def small_intensity(small_crystal):
    return ground_truth_intensity(small_crystal)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
