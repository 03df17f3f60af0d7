import numpy as np
import pytest

from refhsr.datasets import make_scene_corpus


@pytest.fixture(scope="session")
def tiny_scenes():
    """Small rendered corpus shared by pipeline-level tests (2 scenes, 32x32)."""
    return make_scene_corpus(2, 32, 32, bands=4, scale=4, views=2, seed=77)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
