"""
The reverse-mode tape
=====================

Everything the model computes is built from a handful of numpy primitives
recorded on a tape. Here is a gradient checked by hand.
"""

import numpy as np

from colonmark.autodiff import Tape, Tensor, backward, ops

x = Tensor(np.array([[1.0, 2.0, 3.0]]), requires_grad=True)
w = Tensor(np.array([[0.5], [-1.0], [2.0]]), requires_grad=True)

with Tape():
    y = ops.matmul(x, w)                       # 0.5 - 2 + 6 = 4.5
    loss = ops.sum(ops.mul(y, y))              # 20.25
    backward(loss)

print("loss", float(loss.data))
print("dL/dx", x.grad)                         # 2 * 4.5 * w^T
print("dL/dw", w.grad.ravel())                 # 2 * 4.5 * x^T
assert np.allclose(x.grad, 9.0 * w.data.T)

# central differences agree
h = 1e-6
num = []
for i in range(3):
    xp, xm = x.data.copy(), x.data.copy()
    xp[0, i] += h
    xm[0, i] -= h
    num.append((((xp @ w.data) ** 2).sum() - ((xm @ w.data) ** 2).sum()) / (2 * h))
print("finite differences", np.round(num, 6))

# operations outside a Tape are plain numpy, nothing is recorded
z = ops.softmax(Tensor(np.array([1.0, 2.0, 3.0])))
print("softmax", z.data)
