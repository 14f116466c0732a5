"""Dense float64 tensors with a tape-based reverse-mode autodiff.

Every op returns a new :class:`Tensor`. When a :class:`Tape` is active and
at least one input requires a gradient, the op appends its output node to
the tape together with a closure that pushes the output gradient back to
the inputs. Nodes land on the tape in creation order, which is a valid
topological order, so :meth:`Tape.backward` simply walks it in reverse.

Without an active tape nothing is recorded, which is what evaluation uses.

Supported shapes are scalars (stored as shape ``(1,)``), vectors and
matrices. Memory matrices keep one cell per *column*.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class GradientError(RuntimeError):
    """backward() called with an unusable loss or without a tape."""


_local = threading.local()


def _active_tape():
    return getattr(_local, "tape", None)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "inputs", "backward_fn", "op", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self.inputs = ()
        self.backward_fn = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self):
        return self.value

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else _scalar_fail(self)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _scalar_fail(t):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


class Parameter(Tensor):
    """A named trainable leaf. ``grad`` always matches ``value`` in shape."""

    __slots__ = ()

    def __init__(self, value, name):
        super().__init__(value, requires_grad=True, name=name)
        self.zero_grad()

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)


class Tape:
    """Ordered record of differentiable nodes for one forward pass.

    A tape is single-writer. Concurrent forward passes need their own tape;
    parameter values may be shared read-only.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        self._prev = _active_tape()
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        return False

    def record(self, node):
        self.nodes.append(node)

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss, params=()):
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

        ``params`` that are not reachable keep (or get) a zero gradient.
        Intermediate gradients are released afterwards.
        """
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = getattr(loss, "shape", type(loss).__name__)
            raise GradientError(f"backward() needs a scalar loss, got shape {shape}")
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.value)
        if loss.backward_fn is None:
            return
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes):
            if node.grad is None:
                continue
            node.backward_fn(node.grad)
            node.grad = None


@contextmanager
def no_record():
    """Temporarily disable recording, e.g. for evaluation inside training."""
    prev = _active_tape()
    _local.tape = None
    try:
        yield
    finally:
        _local.tape = prev


def backward(loss, params=()):
    """Backpropagate through the currently active tape."""
    tape = _active_tape()
    if tape is None:
        raise GradientError("backward() called outside an active Tape")
    tape.backward(loss, params)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, inputs, backward_fn, op):
    out = Tensor(value)
    out.op = op
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.inputs = inputs
        out.backward_fn = backward_fn
        tape.record(out)
    return out


def _push(t, g):
    if t.requires_grad:
        t.accumulate(g)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product for 2-D @ 2-D, 2-D @ 1-D and 1-D @ 2-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or (av.ndim == 1 and bv.ndim == 1):
        raise ShapeError(f"matmul: unsupported operand shapes {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for shapes {av.shape} and {bv.shape}")

    def back(g):
        if av.ndim == 2 and bv.ndim == 2:
            _push(a, g @ bv.T)
            _push(b, av.T @ g)
        elif av.ndim == 2:
            _push(a, np.outer(g, bv))
            _push(b, av.T @ g)
        else:
            _push(a, bv @ g)
            _push(b, np.outer(av, g))

    return _make(av @ bv, (a, b), back, "matmul")


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {x.shape}")
    return _make(x.value.T.copy(), (x,), lambda g: _push(x, g.T), "transpose")


# ---------------------------------------------------------------- elementwise


def _binary_shapes(op, av, bv):
    """Return 'same', 'col_b' or 'col_a' for the allowed broadcast patterns."""
    if av.shape == bv.shape:
        return "same"
    if av.ndim == 2 and bv.ndim == 1 and bv.shape[0] == av.shape[0]:
        return "col_b"
    if bv.ndim == 2 and av.ndim == 1 and av.shape[0] == bv.shape[0]:
        return "col_a"
    raise ShapeError(f"{op}: incompatible shapes {av.shape} and {bv.shape}")


def add(a, b):
    """Elementwise sum. A length-d vector broadcasts across the columns of a d×n matrix."""
    a, b = as_tensor(a), as_tensor(b)
    mode = _binary_shapes("add", a.value, b.value)
    if mode == "same":
        val = a.value + b.value
    elif mode == "col_b":
        val = a.value + b.value[:, None]
    else:
        val = a.value[:, None] + b.value

    def back(g):
        _push(a, g.sum(axis=1) if mode == "col_a" else g)
        _push(b, g.sum(axis=1) if mode == "col_b" else g)

    return _make(val, (a, b), back, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        _push(a, g)
        _push(b, -g)

    return _make(a.value - b.value, (a, b), back, "sub")


def mul(a, b):
    """Elementwise (Hadamard) product of equal-shaped operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value

    def back(g):
        _push(a, g * bv)
        _push(b, g * av)

    return _make(av * bv, (a, b), back, "mul")


def scale(x, c):
    """Multiply by a python constant."""
    x = as_tensor(x)
    c = float(c)
    return _make(x.value * c, (x,), lambda g: _push(x, g * c), "scale")


def one_minus(x):
    x = as_tensor(x)
    return _make(1.0 - x.value, (x,), lambda g: _push(x, -g), "one_minus")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: _push(x, g * (1.0 - y * y)), "tanh")


def sigmoid(x):
    x = as_tensor(x)
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    y = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(y, (x,), lambda g: _push(x, g * y * (1.0 - y)), "sigmoid")


def relu(x):
    x = as_tensor(x)
    mask = x.value > 0
    return _make(x.value * mask, (x,), lambda g: _push(x, g * mask), "relu")


def log(x, floor=0.0):
    """Natural log of ``max(x, floor)``; clipped entries get zero gradient."""
    x = as_tensor(x)
    v = x.value
    keep = ~(v <= floor)  # NaN stays NaN
    if floor <= 0 and not keep.all():
        raise ValueError("log of a non-positive value without a floor")
    safe = np.where(keep, v, floor)
    return _make(np.log(safe), (x,), lambda g: _push(x, np.where(keep, g / safe, 0.0)), "log")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
}


def elementwise(op, *args):
    """Dispatch by name: ``elementwise('relu', x)``, ``elementwise('add', a, b)``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; expected one of {sorted(_ELEMENTWISE)}") from None
    return fn(*args)


# ---------------------------------------------------------------- reductions and reshaping


def softmax(x):
    """Softmax of a vector, computed after subtracting the max."""
    x = as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"softmax expects a vector, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("softmax of an empty vector")
    z = np.exp(x.value - x.value.max())
    y = z / z.sum()

    def back(g):
        _push(x, y * (g - np.dot(g, y)))

    return _make(y, (x,), back, "softmax")


def _check_axis(x, axis):
    if axis is not None and not (-x.ndim <= axis < x.ndim):
        raise ValueError(f"axis {axis} is invalid for a tensor of shape {x.shape}")


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    _check_axis(x, axis)
    shape = x.shape
    if axis is None:
        val = np.array([x.value.sum()])
        back = lambda g: _push(x, np.full(shape, g[0]))  # noqa: E731
    else:
        val = x.value.sum(axis=axis)
        back = lambda g: _push(x, np.broadcast_to(np.expand_dims(g, axis), shape))  # noqa: E731
    return _make(val, (x,), back, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    _check_axis(x, axis)
    count = x.size if axis is None else x.shape[axis]
    if count == 0:
        raise ValueError(f"mean over an empty axis of shape {x.shape}")
    return scale(sum(x, axis), 1.0 / count)


def average(tensors):
    """Mean of equally-shaped tensors, summed in the given order."""
    if not tensors:
        raise ValueError("average of an empty list")
    acc = tensors[0]
    for t in tensors[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(tensors)) if len(tensors) > 1 else acc


def concat(tensors):
    """Concatenate vectors end to end."""
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors:
        if t.ndim != 1:
            raise ShapeError(f"concat expects vectors, got shape {t.shape}")
    sizes = [t.size for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            _push(t, g[lo:hi])

    return _make(np.concatenate([t.value for t in tensors]), tuple(tensors), back, "concat")


def row(x, i):
    """Row ``i`` of a matrix as a vector (embedding lookup)."""
    x = as_tensor(x)
    if x.ndim != 2 or not (0 <= i < x.shape[0]):
        raise IndexError(f"row {i} out of range for shape {x.shape}")
    shape = x.shape

    def back(g):
        full = np.zeros(shape)
        full[i] = g
        _push(x, full)

    return _make(x.value[i].copy(), (x,), back, "row")


def pick(x, i):
    """Entry ``i`` of a vector as a one-element tensor."""
    x = as_tensor(x)
    if x.ndim != 1 or not (0 <= i < x.size):
        raise IndexError(f"index {i} out of range for shape {x.shape}")
    n = x.size

    def back(g):
        full = np.zeros(n)
        full[i] = g[0]
        _push(x, full)

    return _make(x.value[i : i + 1].copy(), (x,), back, "pick")


def dropout(x, rate, training, rng):
    """Inverted dropout: zero with probability ``rate``, rescale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.value * mask, (x,), lambda g: _push(x, g * mask), "dropout")
