"""Dense 2-D tensors with tape-based reverse-mode differentiation.

Every value is a ``(rows, cols)`` float64 matrix.  Operations executed while a
:class:`Tape` is active (``with Tape() as tape:``) are recorded in execution
order, which is already a topological order of the graph; :meth:`Tape.backward`
replays the records in reverse and accumulates gradients into leaf tensors.

Row-wise reductions (``l2_distance`` and friends) return an ``(n, 1)`` column,
so a single pair of row vectors yields a ``1 x 1`` scalar.
"""

from __future__ import annotations

import itertools
import threading

import numpy as np

from .errors import ContractError, DegenerateInputError, DimensionError

DTYPE = np.float64

# Numerical guards.
DIST_EPS = 1e-12
COS_EPS = 1e-12
PROB_MIN = 1e-7
PROB_MAX = 1.0 - 1e-7

_ids = itertools.count()
_local = threading.local()


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name", "node_id", "_leaf")

    def __init__(self, value, requires_grad=False, name=None, _leaf=True):
        value = np.asarray(value, dtype=DTYPE)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        elif value.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.grad = np.zeros_like(value) if (requires_grad and _leaf) else None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id = next(_ids)
        self._leaf = _leaf

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self):
        return self._leaf

    def item(self):
        if self.value.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def numpy(self):
        return self.value

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def detach(self):
        return Tensor(self.value, requires_grad=False, name=self.name)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full((1, 1), float(x)))


def parameter(value, name=None):
    """Trainable leaf tensor."""
    return Tensor(value, requires_grad=True, name=name)


def constant(value, name=None):
    return Tensor(value, requires_grad=False, name=name)


class Tape:
    """Recording of differentiable operations, confined to one thread."""

    def __init__(self):
        self._records = []

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def __len__(self):
        return len(self._records)

    def record(self, out, inputs, backward_fn):
        self._records.append((out, inputs, backward_fn))

    def backward(self, seed):
        if not isinstance(seed, Tensor) or seed.shape != (1, 1):
            shape = getattr(seed, "shape", None)
            raise ContractError(f"backward seed must be a 1x1 scalar tensor, got {shape}")
        if seed.is_leaf or not seed.requires_grad:
            raise ContractError("backward seed was not produced by a recorded operation")
        if not any(rec[0] is seed for rec in reversed(self._records)):
            raise ContractError("backward seed was not recorded on this tape")
        grads = {seed.node_id: np.ones((1, 1), dtype=DTYPE)}
        for out, inputs, backward_fn in reversed(self._records):
            g = grads.pop(out.node_id, None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    inp.grad += gi
                elif inp.node_id in grads:
                    grads[inp.node_id] = grads[inp.node_id] + gi
                else:
                    grads[inp.node_id] = gi


def active_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def backward(tape, seed):
    tape.backward(seed)


def _result(value, inputs, backward_fn):
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs_grad, _leaf=not needs_grad)
    if needs_grad:
        tape.record(out, inputs, backward_fn)
    return out


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- linear algebra

def linear(x, weight, bias):
    n, p = x.shape
    if weight.shape[0] != p or bias.shape != (1, weight.shape[1]):
        raise DimensionError(
            f"linear: input {x.shape}, weight {weight.shape}, bias {bias.shape} do not conform"
        )
    xv, wv = x.value, weight.value
    out = xv @ wv + bias.value

    def back(g):
        return (
            g @ wv.T if x.requires_grad else None,
            xv.T @ g if weight.requires_grad else None,
            g.sum(axis=0, keepdims=True) if bias.requires_grad else None,
        )

    return _result(out, (x, weight, bias), back)


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    av, bv = a.value, b.value
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a, b):
    if b.shape == (1, 1) and a.shape != (1, 1):
        a, b = b, a
    if a.shape == (1, 1) and b.shape != (1, 1):
        return _result(a.value + b.value, (a, b), lambda g: (g.sum().reshape(1, 1), g))
    _same_shape("add", a, b)
    return _result(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape("sub", a, b)
    return _result(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a, c):
    return _result(a.value * c, (a,), lambda g: (g * c,))


def concat_cols(a, b):
    if a.shape[0] != b.shape[0]:
        raise DimensionError(f"concat_cols: row mismatch {a.shape} vs {b.shape}")
    p = a.shape[1]
    out = np.concatenate([a.value, b.value], axis=1)
    return _result(out, (a, b), lambda g: (g[:, :p], g[:, p:]))


def rows(a, index):
    """Gather rows ``a[index]``; gradients scatter-add back."""
    index = np.asarray(index, dtype=np.intp)
    n = a.shape[0]

    def back(g):
        full = np.zeros((n, g.shape[1]), dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.value[index], (a,), back)


# ---------------------------------------------------------------- elementwise

def leaky_relu(x, slope=0.2):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    xv = x.value
    mask = xv >= 0
    out = np.where(mask, xv, slope * xv)
    return _result(out, (x,), lambda g: (np.where(mask, g, slope * g),))


def relu_max0(x):
    xv = x.value
    # Gradient is zero at exactly 0 so a satisfied hinge has zero gradient.
    mask = xv > 0
    return _result(np.where(mask, xv, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x):
    out = _sigmoid(x.value)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log(x):
    """Natural log of a probability, clamped to ``[PROB_MIN, PROB_MAX]``."""
    xv = x.value
    clamped = np.clip(xv, PROB_MIN, PROB_MAX)
    inside = (xv >= PROB_MIN) & (xv <= PROB_MAX)
    return _result(np.log(clamped), (x,), lambda g: (np.where(inside, g / clamped, 0.0),))


def log_sigmoid(x):
    """``log(sigmoid(x))`` without overflow for large ``|x|``."""
    xv = x.value
    out = np.minimum(xv, 0.0) - np.log1p(np.exp(-np.abs(xv)))
    return _result(out, (x,), lambda g: (g * _sigmoid(-xv),))


# ---------------------------------------------------------------- reductions

def sum(x):  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _result(x.value.sum().reshape(1, 1), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x):
    shape = x.shape
    n = x.value.size
    if n == 0:
        raise DimensionError("mean of an empty tensor")
    return _result(
        (x.value.sum() / n).reshape(1, 1), (x,), lambda g: (np.broadcast_to(g / n, shape).copy(),)
    )


def row_sum(x):
    shape = x.shape
    return _result(x.value.sum(axis=1, keepdims=True), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def l2_distance(a, b):
    """Row-wise Euclidean distance, shape ``(n, 1)``."""
    _same_shape("l2_distance", a, b)
    diff = a.value - b.value
    dist = np.sqrt((diff * diff).sum(axis=1, keepdims=True))
    safe = np.where(dist < DIST_EPS, np.inf, dist)
    # Subgradient 0 at zero distance.
    unit = diff / safe

    def back(g):
        ga = g * unit
        return ga, -ga

    return _result(dist, (a, b), back)


def l1_distance(a, b):
    """Row-wise L1 distance, shape ``(n, 1)``."""
    _same_shape("l1_distance", a, b)
    diff = a.value - b.value
    sign = np.sign(diff)

    def back(g):
        ga = g * sign
        return ga, -ga

    return _result(np.abs(diff).sum(axis=1, keepdims=True), (a, b), back)


def cosine_similarity(a, b):
    """Row-wise cosine similarity, shape ``(n, 1)``.

    Raises :class:`DegenerateInputError` if any row of either input is zero.
    """
    _same_shape("cosine_similarity", a, b)
    av, bv = a.value, b.value
    na = np.sqrt((av * av).sum(axis=1, keepdims=True))
    nb = np.sqrt((bv * bv).sum(axis=1, keepdims=True))
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    denom = np.maximum(na * nb, COS_EPS)
    dot = (av * bv).sum(axis=1, keepdims=True)
    cos = dot / denom

    def back(g):
        ga = g * (bv / denom - cos * av / (na * na)) if a.requires_grad else None
        gb = g * (av / denom - cos * bv / (nb * nb)) if b.requires_grad else None
        return ga, gb

    return _result(cos, (a, b), back)
