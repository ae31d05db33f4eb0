"""Test oracles shared across modules."""

import numpy as np

from colonmark.autodiff import Tape, Tensor, backward, ops


def finite_difference(f, arrays, h=1e-3):
    """Central differences of scalar ``f(*arrays)`` w.r.t. each array (float64)."""
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a, dtype=np.float64)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            plus = [x.copy() for x in arrays]
            minus = [x.copy() for x in arrays]
            plus[k][i] += h
            minus[k][i] -= h
            g[i] = (f(*plus) - f(*minus)) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / denom)


def check_primitive(build, arrays, seed=0, h=1e-3):
    """Max relative error between taped and numeric gradients of ``sum(build(*xs) * w)``.

    ``w`` is a fixed random weight so every output element contributes.
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    out_shape = build(*[Tensor(a) for a in arrays]).shape
    w = np.random.default_rng(seed).uniform(-1, 1, size=out_shape)

    def scalar(*xs):
        return float((build(*[Tensor(x) for x in xs]).data * w).sum())

    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape():
        loss = ops.sum(ops.mul(build(*ts), Tensor(w)))
        backward(loss)
    numeric = finite_difference(scalar, arrays, h)
    return max(rel_error(t.grad, n) for t, n in zip(ts, numeric))
