import numpy as np
import pytest

from tlnets.tensor import Graph, Tensor


def grads_of(fn, *params):
    """Run ``fn`` on a fresh tape and return the gradients of ``params``."""
    for p in params:
        p.requires_grad = True
    with Graph() as g:
        out = fn()
    found = g.backward(out)
    return [found.get(p) for p in params]


def leaf(arr):
    return Tensor(np.asarray(arr, dtype=float), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
