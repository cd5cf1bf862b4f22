import numpy as np
import pytest

from denoisekd import data


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small in-memory corpus shared by training-level tests."""
    manifest = data.build_synthetic_manifest(seed=77, counts={"train": 16, "val": 6, "test": 6})
    return data.MixtureDataset(manifest, seed=77)
