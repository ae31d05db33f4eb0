"""Dense tensors and the gradient tape.

Operations run eagerly on numpy arrays. While a :class:`Tape` is active
(``with Tape() as tape: ...``), every primitive whose inputs require
gradients appends a record holding its inputs, its output and a closure
mapping the output gradient to input gradients. :func:`backward` walks
those records in reverse.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import EmptyTape, NotScalarLoss

DEFAULT_DTYPE = np.float32

_active_tapes: list["Tape"] = []


class Tensor:
    """A shaped array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; the primitives live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops
        return ops.slice(self, index)

    @property
    def T(self):
        from . import ops
        return ops.transpose(self)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class _Record:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: tuple, backward: BackwardFn):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations for one forward pass."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tapes.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        for rec in self.records:
            rec.output._tape = None
        self.records = []

    def backward(self, loss: Tensor) -> None:
        backward(loss)


def active_tape() -> Optional[Tape]:
    return _active_tapes[-1] if _active_tapes else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def record(out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap ``out_data`` as a Tensor and log it on the active tape.

    ``backward_fn`` receives the gradient of the output and returns one
    entry per input (``None`` where no gradient is needed). Nothing is
    recorded when no tape is active or no input requires a gradient.
    """
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.records.append(_Record(out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor the scalar ``loss`` depends on.

    Leaf gradients accumulate into any existing ``.grad``; call
    ``zero_grad`` between steps.
    """
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss must be a scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or not tape.records:
        raise EmptyTape("loss was not produced by a recorded operation")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(rec.output) for rec in tape.records}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.output), None)
        if g is None:
            continue
        rec.output.grad = g
        in_grads = rec.backward(g)
        for t, gi in zip(rec.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                raise AssertionError(f"gradient shape {gi.shape} != tensor shape {t.shape}")
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi.astype(t.dtype, copy=False)
            if key not in produced:
                leaves[key] = t
    for key, t in leaves.items():
        g = grads[key]
        t.grad = g if t.grad is None else t.grad + g
