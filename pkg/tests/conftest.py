import numpy as np
import pytest

from hte_test import _accel
from hte_test.data import Dataset


@pytest.fixture(params=["numba", "numpy"])
def each_backend(request):
    if request.param == "numba" and not _accel.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    previous = _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(previous)


def random_design(rng, n=60, p=3, q=3, k=1, intercept=True):
    """Random over- or just-identified linear design with heterogeneous errors."""
    w = rng.standard_normal((n, q))
    if intercept:
        w[:, 0] = 1.0
    mix = rng.standard_normal((q, p))
    z = w @ mix + 0.5 * rng.standard_normal((n, p))
    if intercept:
        z[:, 0] = 1.0
    x = rng.standard_normal(n)
    y = z @ rng.standard_normal(p) + (1 + 0.3 * z[:, -1]) * rng.standard_normal(n)
    return Dataset(y, z, w, x, k=k)
