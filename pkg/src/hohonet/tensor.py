"""Dense tensors with tape-based reverse-mode differentiation.

Every value in the model is a :class:`Tensor` wrapping a float32 or float64
numpy array. Operations executed inside a ``with Tape() as tape:`` block are
recorded in execution order; ``tape.backward(loss)`` walks that record in
reverse and accumulates gradients into every tracked tensor.

>>> x = Tensor([2.0], requires_grad=True, dtype=np.float64)
>>> with Tape() as tape:
...     loss = (x * x).sum()
>>> tape.backward(loss)
>>> x.grad
array([4.])
"""
from __future__ import annotations

import contextlib
import logging
import threading
import time
from collections import defaultdict
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))

_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def _active_profile() -> Optional["OpProfile"]:
    return getattr(_state, "profile", None)


class Tensor:
    """N-dimensional real array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in FLOAT_TYPES:
            arr = arr.astype(np.float32)
        if arr.dtype not in FLOAT_TYPES:
            raise TypeError(f"unsupported precision {arr.dtype}; use float32 or float64")
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[int] = None

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
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce("max", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)

    def __getitem__(self, index):
        return take(self, index)


class Tape:
    """Ordered record of differentiable operations.

    Entries are appended as operations execute, so every input node precedes
    its consumer. Tapes are confined to the thread that created them.
    """

    def __init__(self):
        self.entries: list[tuple[tuple, Tensor, Callable]] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.tapes.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, inputs: tuple, out: Tensor, backward_fn: Callable) -> None:
        out.node = len(self.entries)
        self.entries.append((inputs, out, backward_fn))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor on ``tape``."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None or loss.node >= len(tape.entries) or tape.entries[loss.node][1] is not loss:
        raise ValueError("loss was not recorded on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    touched: dict[int, Tensor] = {id(loss): loss}
    for inputs, out, fn in reversed(tape.entries[: loss.node + 1]):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        _deposit(out, g)
        in_grads = fn(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
                touched[key] = t
    # remaining entries are leaves (never produced by a recorded op)
    for key, g in grads.items():
        _deposit(touched[key], g)


def _deposit(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.dtype)
    if g.shape != t.shape:
        raise RuntimeError(f"gradient shape {g.shape} does not match tensor {t.shape}")
    t.grad = g.copy() if t.grad is None else t.grad + g


class OpProfile:
    """Wall-time and call counts per operation name."""

    def __init__(self):
        self.seconds: dict[str, float] = defaultdict(float)
        self.calls: dict[str, int] = defaultdict(int)

    def as_dict(self) -> dict:
        return {
            name: {"calls": self.calls[name], "seconds": self.seconds[name]}
            for name in sorted(self.calls)
        }


@contextlib.contextmanager
def profile():
    """Collect per-op timings for every op run in this thread."""
    prof = OpProfile()
    prev = _active_profile()
    _state.profile = prof
    try:
        yield prof
    finally:
        _state.profile = prev


def _timed(name: str):
    def wrap(fn):
        def inner(*args, **kwargs):
            prof = _active_profile()
            if prof is None:
                return fn(*args, **kwargs)
            t0 = time.perf_counter()
            try:
                return fn(*args, **kwargs)
            finally:
                prof.seconds[name] += time.perf_counter() - t0
                prof.calls[name] += 1

        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        inner.__wrapped__ = fn
        return inner

    return wrap


def as_tensor(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _check_precision(*ts: Tensor) -> None:
    dtypes = {t.dtype for t in ts}
    if len(dtypes) > 1:
        raise TypeError(f"mixed precision operands: {sorted(str(d) for d in dtypes)}")


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` as an op output and record it if any input is tracked.

    ``backward_fn`` maps the output gradient to one gradient (or None) per input.
    """
    tape = _active_tape()
    track = tape is not None and any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track, dtype=inputs[0].dtype)
    if track:
        tape.record(tuple(inputs), out, backward_fn)
    return out


# ---------------------------------------------------------------- elementwise


def _binary_operands(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b)
    b = as_tensor(b, like=a)
    _check_precision(a, b)
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return a, b
    # trailing-axis bias addition
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return a, b
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return a, b
    raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return np.asarray(g.sum()).reshape(shape)
    # trailing-axis case
    return g.reshape(-1, shape[-1]).sum(axis=0).reshape(shape)


@_timed("add")
def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


@_timed("sub")
def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


@_timed("mul")
def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


@_timed("scale")
def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return make_result(a.data * a.dtype.type(s), (a,), lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


@_timed("relu")
def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_result(np.maximum(a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name: add, sub, mul, relu or scale (``b`` is the factor)."""
    if op == "add":
        return add(a, b)
    if op == "sub":
        return sub(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "relu":
        return relu(a)
    if op == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


@_timed("abs")
def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return make_result(np.abs(a.data), (a,), lambda g: (g * sign,))


@_timed("exp")
def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return make_result(y, (a,), lambda g: (g * y,))


@_timed("log")
def log(a: Tensor) -> Tensor:
    x = a.data
    return make_result(np.log(x), (a,), lambda g: (g / x,))


@_timed("sigmoid")
def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)
    return make_result(y, (a,), lambda g: (g * y * (1 - y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@_timed("softplus")
def softplus(a: Tensor) -> Tensor:
    x = a.data
    y = np.logaddexp(0, x).astype(x.dtype)
    return make_result(y, (a,), lambda g: (g * _sigmoid(x),))


# ---------------------------------------------------------------- linear algebra


@_timed("matmul")
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading (batch) axes must be equal on both sides, or one operand must be a
    plain 2-D matrix that is applied to every batch entry of the other.
    """
    _check_precision(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"inner extent mismatch: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"batch extent mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        if a.ndim == 2 and ga.ndim > 2:
            ga = ga.reshape(-1, *a.shape).sum(axis=0)
        if b.ndim == 2 and gb.ndim > 2:
            gb = gb.reshape(-1, *b.shape).sum(axis=0)
        return ga, gb

    return make_result(out, (a, b), bw)


@_timed("linear_map")
def linear_map(x: Tensor, m: np.ndarray, axis: int) -> Tensor:
    """Apply the constant matrix ``m`` (out x in) along ``axis`` of ``x``."""
    axis = axis % x.ndim
    m = np.asarray(m, dtype=x.dtype)
    if x.shape[axis] != m.shape[1]:
        raise ValueError(f"extent mismatch: axis {axis} of {x.shape} vs matrix {m.shape}")
    xm = np.moveaxis(x.data, axis, -1)
    out = np.moveaxis(xm @ m.T, -1, axis)

    def bw(g):
        gm = np.moveaxis(g, axis, -1) @ m
        return (np.ascontiguousarray(np.moveaxis(gm, -1, axis)),)

    return make_result(np.ascontiguousarray(out), (x,), bw)


# ---------------------------------------------------------------- reductions


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


@_timed("reduce")
def reduce(op: str, a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Sum, mean or max over ``axis`` (all axes when None).

    Max routes its gradient to the first maximal element along the reduced axes.
    """
    axes = _norm_axis(axis, a.ndim)
    x = a.data
    if op == "sum":
        out = x.sum(axis=axes, keepdims=keepdims)

        def bw(g):
            g = g if keepdims or axes is None else np.expand_dims(g, axes)
            return (np.broadcast_to(g, a.shape).copy(),)

    elif op == "mean":
        n = x.size if axes is None else int(np.prod([a.shape[i] for i in axes]))
        out = x.mean(axis=axes, keepdims=keepdims)

        def bw(g):
            g = g if keepdims or axes is None else np.expand_dims(g, axes)
            return (np.broadcast_to(g / n, a.shape).copy(),)

    elif op == "max":
        all_axes = tuple(range(a.ndim)) if axes is None else axes
        keep = [i for i in range(a.ndim) if i not in all_axes]
        perm = keep + list(all_axes)
        xt = np.transpose(x, perm)
        lead = xt.shape[: len(keep)]
        flat = xt.reshape(*lead, -1)
        idx = np.argmax(flat, axis=-1)
        red = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        out = red
        if keepdims:
            out = np.expand_dims(red, all_axes) if all_axes else red

        def bw(g):
            g = np.asarray(g).reshape(lead)
            gflat = np.zeros(flat.shape, dtype=x.dtype)
            np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
            gt = gflat.reshape(xt.shape)
            return (np.transpose(gt, np.argsort(perm)),)

    else:
        raise ValueError(f"unknown reduction {op!r}")
    return make_result(np.asarray(out, dtype=x.dtype), (a,), bw)


# ---------------------------------------------------------------- shape ops


@_timed("reshape")
def reshape(a: Tensor, shape) -> Tensor:
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


@_timed("transpose")
def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_result(
        np.ascontiguousarray(np.transpose(a.data, axes)),
        (a,),
        lambda g: (np.transpose(g, inv),),
    )


@_timed("take")
def take(a: Tensor, index) -> Tensor:
    """Basic (slice / integer) indexing."""
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return make_result(np.ascontiguousarray(out), (a,), bw)


@_timed("concat")
def concat(ts: Sequence[Tensor], axis: int) -> Tensor:
    _check_precision(*ts)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return make_result(
        np.concatenate([t.data for t in ts], axis=axis),
        tuple(ts),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


# ---------------------------------------------------------------- softmax family


@_timed("softmax")
def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=axis, keepdims=True)
    return make_result(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


@_timed("log_softmax")
def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(x).sum(axis=axis, keepdims=True))
    y = x - lse
    p = np.exp(y)
    return make_result(y, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------- gradient checking


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, eps: float = 1e-4) -> np.ndarray:
    """Central finite differences of the scalar ``fn()`` with respect to ``t``."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(fn().data.sum())
        flat[i] = orig - eps
        lo = float(fn().data.sum())
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return grad


def gradcheck(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    rtol: float = 1e-4,
    atol: float = 1e-6,
) -> float:
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` must build a scalar from ``params`` (64-bit tensors). Returns the
    worst relative error and raises AssertionError when any element exceeds
    ``rtol * max(|analytic|, |numeric|) + atol``.
    """
    for p in params:
        if p.dtype != np.float64:
            raise TypeError("gradcheck requires 64-bit tensors")
        p.requires_grad = True
        p.grad = None
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    worst = 0.0
    for k, p in enumerate(params):
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numerical_grad(fn, p, eps)
        diff = np.abs(analytic - numeric)
        bound = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
        scale_ = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol / rtol)
        worst = max(worst, float((diff / scale_).max(initial=0.0)))
        if np.any(diff > bound):
            i = int(np.argmax(diff - bound))
            raise AssertionError(
                f"param {k} shape {p.shape}: analytic {analytic.reshape(-1)[i]:.8g} "
                f"vs numeric {numeric.reshape(-1)[i]:.8g} at flat index {i}"
            )
    return worst
