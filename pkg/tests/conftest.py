import numpy as np
import pytest

from distill_lab import Rng


@pytest.fixture
def np_rng():
    return np.random.default_rng(20240813)


@pytest.fixture
def rng_factory():
    def make(stream: str, seed: int = 0) -> Rng:
        return Rng(seed, stream)
    return make
