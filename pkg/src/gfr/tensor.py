"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray.  Every differentiable op that touches a
tensor with ``requires_grad`` records a :class:`Node` carrying a monotonically
increasing id; creation order is therefore a topological order and
:func:`backward` replays the recorded nodes in reverse id order, visiting each
exactly once.

All ops live in the ``OPS`` registry so the verification suite can confirm
that every backward rule has a finite-difference check.
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, EmptyLossError, NonFiniteError

_ids = itertools.count()
_state = threading.local()

OPS: dict[str, Callable] = {}


def register(name):
    def deco(fn):
        OPS[name] = fn
        return fn

    return deco


# ---------------------------------------------------------------------------
# precision and grad mode


_dtype = np.float64


def get_default_dtype():
    return _dtype


def set_default_dtype(dtype):
    global _dtype
    dtype = np.dtype(dtype).type
    if dtype not in (np.float64, np.float32):
        raise ValueError(f"unsupported precision {dtype}")
    _dtype = dtype


@contextmanager
def precision(dtype):
    prev = _dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def is_grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


# ---------------------------------------------------------------------------
# core types


class Node:
    __slots__ = ("op", "inputs", "backward", "id")

    def __init__(self, op, inputs, backward):
        self.op = op
        self.inputs = inputs
        self.backward = backward
        self.id = next(_ids)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype or _dtype, copy=True)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None
        self.node = None
        self.name = name

    @classmethod
    def _wrap(cls, data, requires_grad=False, node=None):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = requires_grad
        t.grad = None
        t.node = node
        t.name = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self.node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor._wrap(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=_dtype))


def _check_finite(data, op):
    if not np.isfinite(data).all():
        bad = int(np.size(data) - np.isfinite(data).sum())
        raise NonFiniteError(f"{op}: {bad} non-finite value(s) in output of shape {np.shape(data)}")


def _result(op, data, inputs, backward_fn):
    _check_finite(data, op)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        return Tensor._wrap(data, True, Node(op, inputs, backward_fn))
    return Tensor._wrap(data)


# ---------------------------------------------------------------------------
# tape and backward


class Tape:
    """Recorded nodes reachable from a root, ordered by creation."""

    def __init__(self, root: Tensor):
        seen = set()
        tensors = []
        stack = [root]
        while stack:
            t = stack.pop()
            if t.node is None or id(t.node) in seen:
                continue
            seen.add(id(t.node))
            tensors.append(t)
            stack.extend(i for i in t.node.inputs if i.requires_grad)
        tensors.sort(key=lambda t: t.node.id)
        self.tensors = tensors

    @property
    def nodes(self):
        return [t.node for t in self.tensors]

    def __len__(self):
        return len(self.tensors)

    def run_backward(self, root: Tensor, seed=None):
        pending = {id(root): np.ones_like(root.data) if seed is None else seed}
        visited = 0
        for t in reversed(self.tensors):
            g = pending.pop(id(t), None)
            visited += 1
            if g is None:
                continue
            grads = t.node.backward(g)
            for inp, gi in zip(t.node.inputs, grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.node is None:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                elif id(inp) in pending:
                    pending[id(inp)] = pending[id(inp)] + gi
                else:
                    pending[id(inp)] = gi
        return visited


def backward(loss: Tensor) -> int:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Returns the number of nodes visited.  Grads accumulate into existing
    buffers, so clear them between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
    if loss.node is None:
        raise ContractError("backward root is not on the tape (no input requires grad)")
    return Tape(loss).run_backward(loss)


# ---------------------------------------------------------------------------
# elementwise


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


@register("add")
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result("add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


@register("sub")
def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result("sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


@register("mul")
def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(
        "mul", ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


@register("neg")
def neg(a):
    return _result("neg", -a.data, (a,), lambda g: (-g,))


@register("gelu")
def gelu(x):
    """Exact (erf) GELU."""
    xd = x.data
    return _result("gelu", kernels.gelu_forward(xd), (x,), lambda g: (kernels.gelu_backward(xd, g),))


# ---------------------------------------------------------------------------
# linear algebra


@register("matmul")
def matmul(a, b):
    """Batched matrix product following numpy broadcasting on leading dims."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result("matmul", ad @ bd, (a, b), back)


# ---------------------------------------------------------------------------
# shape ops


@register("reshape")
def reshape(x, shape):
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _result("reshape", out, (x,), lambda g: (g.reshape(src),))


@register("transpose")
def transpose(x, axes=None):
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result("transpose", np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


@register("concat")
def concat(xs: Sequence[Tensor], axis=0):
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    cuts = np.cumsum(sizes)[:-1]
    return _result("concat", out, tuple(xs), lambda g: tuple(np.split(g, cuts, axis=axis)))


def _slice(x, axis, start, stop):
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape, dt = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dt)
        full[index] = g
        return (full,)

    return _result("split", np.ascontiguousarray(x.data[index]), (x,), back)


@register("split")
def split(x, sizes: Sequence[int], axis=0):
    """Split along ``axis`` into consecutive pieces of the given sizes."""
    if sum(sizes) != x.shape[axis]:
        raise DimensionError(f"split sizes {list(sizes)} do not cover extent {x.shape[axis]}")
    out, start = [], 0
    for s in sizes:
        out.append(_slice(x, axis, start, start + s))
        start += s
    return out


@register("gather_rows")
def gather_rows(table, idx):
    """Row lookup ``table[idx]``; index -1 yields a zero row.

    This is the embedding lookup; its backward is a scatter-add so repeated
    indices accumulate.
    """
    idx = np.asarray(idx, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError(f"gather_rows needs a 2-D table, got {table.shape}")
    n = table.shape[0]
    if idx.size and (idx.max() >= n or idx.min() < -1):
        raise DimensionError(f"row index out of range for table with {n} rows")
    flat = idx.reshape(-1)
    out = table.data[np.where(flat < 0, 0, flat)]
    if (flat < 0).any():
        out[flat < 0] = 0.0
    shape, dt = table.shape, table.dtype

    def back(g):
        full = np.zeros(shape, dtype=dt)
        kernels.scatter_add_rows(full, flat, g.reshape(flat.size, -1))
        return (full,)

    return _result("gather_rows", out.reshape(idx.shape + (table.shape[1],)), (table,), back)


def embedding(table, ids):
    return gather_rows(table, ids)


# ---------------------------------------------------------------------------
# reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


@register("sum")
def sum_(x, axis=None, keepdims=False):
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _result("sum", np.asarray(out), (x,), back)


@register("mean")
def mean(x, axis=None, keepdims=False):
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([shape[a] for a in axes])) if axes else 1
    out = np.mean(x.data, axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _result("mean", np.asarray(out), (x,), back)


# ---------------------------------------------------------------------------
# fused transformer pieces


@register("layernorm")
def layernorm(x, gamma, beta, eps=1e-5):
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise DimensionError("layernorm over an empty last axis")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layernorm affine shapes {gamma.shape}/{beta.shape} do not match d={d}")
    shape = x.shape
    y, xhat, rstd = kernels.layernorm_forward(x.data.reshape(-1, d), gamma.data, beta.data, eps)
    gd = gamma.data

    def back(g):
        dx, dg, db = kernels.layernorm_backward(g.reshape(-1, d), xhat, rstd, gd)
        return dx.reshape(shape), dg, db

    return _result("layernorm", y.reshape(shape), (x, gamma, beta), back)


@register("attention")
def attention(q, k, v, causal=False):
    """Scaled dot-product attention over ``[..., L, d]`` operands."""
    if not (q.shape == k.shape == v.shape):
        raise DimensionError(f"attention operands differ: {q.shape} {k.shape} {v.shape}")
    L, d = q.shape[-2:]
    scale = 1.0 / math.sqrt(d)
    qd, kd, vd = q.data, k.data, v.data
    scores = (qd @ np.swapaxes(kd, -1, -2)) * scale
    p = kernels.softmax_rows(scores.reshape(-1, L), causal).reshape(scores.shape)
    out = p @ vd

    def back(g):
        dp = g @ np.swapaxes(vd, -1, -2)
        dv = np.swapaxes(p, -1, -2) @ g
        ds = kernels.softmax_rows_backward(p.reshape(-1, L), dp.reshape(-1, L)).reshape(p.shape) * scale
        return ds @ kd, np.swapaxes(ds, -1, -2) @ qd, dv

    return _result("attention", out, (q, k, v), back)


@register("softmax_ce_masked")
def softmax_ce_masked(logits, targets, mask, reduction="mean", row_weights=None):
    """Cross-entropy of ``logits[t]`` against ``targets[t]`` over masked rows.

    ``reduction='mean'`` divides by the masked count, ``'sum'`` keeps the raw
    sum.  ``row_weights`` overrides both with explicit per-row weights (zero
    outside the mask); batch losses use it to average per-sequence means.
    Unmasked rows contribute exactly nothing, forward or backward.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [T, V], got {logits.shape}")
    T, V = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if targets.shape != (T,) or mask.shape != (T,):
        raise DimensionError(f"targets/mask must have length {T}")
    if not mask.any():
        raise EmptyLossError("loss mask selects no positions")
    tm = targets[mask]
    if tm.min() < 0 or tm.max() >= V:
        raise DimensionError(f"target id outside [0, {V})")
    if row_weights is not None:
        w = np.where(mask, np.asarray(row_weights, dtype=logits.dtype), 0.0)
    elif reduction == "mean":
        w = mask / mask.sum()
    elif reduction == "sum":
        w = mask.astype(logits.dtype)
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    safe_t = np.where(mask, targets, 0)
    total, grad = kernels.cross_entropy_rows(logits.data, safe_t, w.astype(logits.dtype))
    return _result("softmax_ce_masked", np.asarray(total, dtype=logits.dtype), (logits,), lambda g: (grad * g,))


# ---------------------------------------------------------------------------
# gradient checking


def numerical_grad(fn: Callable[[], Tensor], x: Tensor, eps=1e-5):
    """Central finite differences of scalar ``fn()`` with respect to ``x.data``."""
    g = np.zeros_like(x.data)
    flat, gflat = x.data.reshape(-1), g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn().item()
            flat[i] = orig - eps
            down = fn().item()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
    return g


def rel_error(a, b, floor=1e-6):
    """Max elementwise relative error with an absolute floor for near-zero pairs."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor), initial=0.0))


def gradcheck(fn: Callable[[], Tensor], inputs: Sequence[Tensor], eps=1e-5) -> float:
    """Largest relative error between backward() and central differences."""
    for t in inputs:
        t.grad = None
    backward(fn())
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, rel_error(analytic, numerical_grad(fn, t, eps)))
    return worst
