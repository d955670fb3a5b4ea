import numpy as np
import pytest

from diffret import numerics as nx
from diffret.corpus import DomainSpec, generate, split
from diffret.numerics import Tape, Tensor
from diffret.pipeline import RunConfig, TrainConfig


def numeric_grad(fn, arrays, h=1e-3):
    """Central differences of scalar ``fn(arrays)`` w.r.t. every entry of every array."""
    out = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            hi = fn(arrays)
            a[i] = old - h
            lo = fn(arrays)
            a[i] = old
            g[i] = (hi - lo) / (2 * h)
        out[name] = g
    return out


def grad_error(build, arrays, h=1e-3):
    """Max relative error between tape gradients and central differences.

    ``build(tensors)`` maps a dict of Tensors to a scalar Tensor. The error
    of each array is max|analytic - numeric| / max(max|analytic|, max|numeric|).
    """
    params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    with Tape():
        loss = build(params)
        analytic = nx.backward(loss, params)

    def f(arrs):
        return build({k: Tensor(v) for k, v in arrs.items()}).item()

    numeric = numeric_grad(f, {k: v.copy() for k, v in arrays.items()}, h)
    worst = 0.0
    for k in arrays:
        scale = max(np.abs(analytic[k]).max(), np.abs(numeric[k]).max(), 1e-12)
        worst = max(worst, np.abs(analytic[k] - numeric[k]).max() / scale)
    return worst


@pytest.fixture(scope="session")
def small_corpus():
    return generate(DomainSpec(classes=4, pairs_per_class=6, d_in=8, words=4, frames=5), seed=3)


@pytest.fixture(scope="session")
def small_split(small_corpus):
    return split(small_corpus, 0.75, seed=3)


@pytest.fixture
def tiny_config():
    return RunConfig(train=TrainConfig(epochs=2, batch_size=6, dim=8, steps=10, seed=1))
