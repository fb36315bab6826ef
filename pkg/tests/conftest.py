import numpy as np
import pytest

from battrack.geometry import Box7
from battrack.tensor import Tape, Tensor


def numeric_grad(f, arrays, eps=1e-6):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``arrays`` (modified in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + eps
            fp = f()
            a[i] = old - eps
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def analytic_grad(build, tensors):
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        loss = build()
    tape.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in tensors]


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)), np.max(np.abs(b))))


def check_gradients(build, tensors, eps=1e-6):
    """Return the worst relative error between tape and finite-difference gradients."""
    ana = analytic_grad(build, tensors)
    num = numeric_grad(lambda: build().item(), [t.data for t in tensors], eps)
    return max(rel_err(a, n) for a, n in zip(ana, num))


def random_box(rng, spread=5.0, min_size=0.5, max_size=4.0):
    return Box7(*rng.uniform(-spread, spread, 3), *rng.uniform(min_size, max_size, 3), rng.uniform(-np.pi, np.pi))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


def directional_check(build, tensors, rng, directions=2, eps=1e-6):
    """Worst relative error of ``grad . v`` against central differences along random ``v``.

    One pair of extra forward passes per direction and tensor, so it scales to
    every parameter of a network where per-entry differences would not.
    """
    ana = analytic_grad(build, tensors)
    worst = 0.0
    for t, g in zip(tensors, ana):
        for _ in range(directions):
            v = rng.normal(size=t.data.shape)
            base = t.data.copy()
            t.data[...] = base + eps * v
            fp = build().item()
            t.data[...] = base - eps * v
            fm = build().item()
            t.data[...] = base
            num = (fp - fm) / (2 * eps)
            a = float(np.sum(g * v))
            worst = max(worst, abs(a - num) / max(1e-7, abs(a), abs(num)))
    return worst
