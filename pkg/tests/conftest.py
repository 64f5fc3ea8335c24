import numpy as np
import pytest

from vctree.ndcore import ParamStore


@pytest.fixture
def store():
    return ParamStore(seed=0)


def make_store(seed=0, dtype=np.float64):
    return ParamStore(seed=seed, dtype=dtype)
