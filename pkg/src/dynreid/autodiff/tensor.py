"""Tensor, tape and the reverse sweep."""

import threading

import numpy as np

from ..errors import DetachedLoss, NotScalar

_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array with an optional gradient buffer.

    ``node`` is ``(tape, index)`` when the tensor was produced by a recorded
    primitive, ``None`` for leaves and constants.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, factor=-1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape=shape)

    def sum(self, axis=None):
        from . import ops
        return ops.sum(self, axis=axis)

    def mean(self, axis=None):
        from . import ops
        return ops.mean(self, axis=axis)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class _Entry:
    __slots__ = ("prim", "inputs", "output", "ctx")

    def __init__(self, prim, inputs, output, ctx):
        self.prim = prim
        self.inputs = inputs
        self.output = output
        self.ctx = ctx


class Tape:
    """Ordered record of primitive applications.

    Used as a context manager; primitives applied inside the ``with`` block
    to at least one grad-requiring input are appended in execution order.
    """

    def __init__(self):
        self.entries = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, prim, inputs, output, ctx):
        output.node = (self, len(self.entries))
        output.requires_grad = True
        self.entries.append(_Entry(prim, inputs, output, ctx))

    def backward(self, loss):
        backward(self, loss)


class no_grad:
    """Suspend recording for the enclosed block."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def backward(tape, loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every grad-requiring leaf.

    Calling twice without clearing grads adds the gradients again.
    """
    if loss.data.size != 1:
        raise NotScalar(f"loss must be scalar, got shape {loss.shape}")
    if loss.node is None or loss.node[0] is not tape:
        raise DetachedLoss("loss was not produced on this tape")
    top = loss.node[1]
    pending = {top: np.ones_like(loss.data)}
    for idx in range(top, -1, -1):
        g = pending.pop(idx, None)
        if g is None:
            continue
        entry = tape.entries[idx]
        grads = entry.prim.backward(entry.ctx, g)
        for inp, gi in zip(entry.inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp.node is not None and inp.node[0] is tape:
                j = inp.node[1]
                if j in pending:
                    pending[j] = pending[j] + gi
                else:
                    pending[j] = gi
            elif inp.node is None:
                gi = np.broadcast_to(gi, inp.shape)
                if inp.grad is None:
                    inp.grad = np.array(gi, dtype=np.float64)
                else:
                    inp.grad = inp.grad + gi
