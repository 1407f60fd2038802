import numpy as np
import pytest

from cstg import tensor as T
from cstg.tensor import Tensor


def central_diff(fn, arrays, h=1e-5):
    """Central finite differences of the scalar ``fn()`` w.r.t. each array (edited in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = fn()
            a[i] = old - h
            down = fn()
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
