"""Minimal reverse-mode autodiff over numpy arrays.

Operations executed inside an active :class:`Tape` are appended to it in
execution order together with a closure that maps the output gradient to
input gradients; :func:`backward` walks the tape in exact reverse. Only leaf
tensors (parameters and inputs created directly) keep a ``.grad``; gradients
of intermediates live in a scratch dict for the duration of one backward
pass, so repeated calls accumulate into leaves only.

Broadcasting is deliberately narrow: elementwise ops accept equal shapes, a
scalar, or an operand whose shape is a trailing suffix of the other's.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float64
_tape_stack: list["Tape"] = []
_grad_enabled = True


def set_precision(name: str) -> None:
    """Set the global floating point precision (``f32`` or ``f64``)."""
    global _default_dtype
    try:
        _default_dtype = _DTYPES[name]
    except KeyError:
        raise ValueError(f"precision must be one of {sorted(_DTYPES)}") from None


def get_dtype():
    return _default_dtype


def precision_name() -> str:
    return "f64" if _default_dtype is np.float64 else "f32"


@contextlib.contextmanager
def precision(name: str):
    global _default_dtype
    old = _default_dtype
    set_precision(name)
    try:
        yield
    finally:
        _default_dtype = old


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them."""
    global _grad_enabled
    old = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_leaf", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._leaf = True
        self._tape = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar for tests and small expressions
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only computation record; use as a context manager."""

    def __init__(self):
        self.nodes: list[tuple[str, tuple[Tensor, ...], Tensor, Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(tag: str, inputs: Sequence[Tensor], out_data: np.ndarray, fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.name = ""
    out._leaf = False
    out._tape = None
    needs = any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    if needs and _grad_enabled and _tape_stack:
        tape = _tape_stack[-1]
        tape.nodes.append((tag, tuple(inputs), out, fn))
        out._tape = tape
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from ``loss``; accumulates."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for tag, inputs, out, fn in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        in_grads = fn(g)
        for t, gi in zip(inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t._leaf:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += gi
            else:
                k = id(t)
                if k in grads:
                    grads[k] = grads[k] + gi
                else:
                    grads[k] = gi


def zero_grad(params) -> None:
    for p in params:
        p.zero_grad()


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_trailing(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape or b.ndim == 0 or a.ndim == 0:
        return
    small, big = (a, b) if a.ndim < b.ndim else (b, a)
    if small.ndim <= big.ndim and big.shape[big.ndim - small.ndim:] == small.shape:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def fn(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(ad, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, ad.shape),
            None if gb is None else _unbroadcast(gb, bd.shape),
        )

    return _record("matmul", (a, b), out, fn)


def add(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_trailing(a.data, b.data, "add")
    sa, sb = a.shape, b.shape

    def fn(g):
        return (_unbroadcast(g, sa), _unbroadcast(g, sb))

    return _record("add", (a, b), a.data + b.data, fn)


def mul(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_trailing(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def fn(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _record("mul", (a, b), ad * bd, fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record("scale", (a,), a.data * a.data.dtype.type(c), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _record("relu", (a,), np.where(pos, a.data, 0).astype(a.data.dtype), lambda g: (g * pos,))


def elementwise(op: str, a: Tensor, b=None) -> Tensor:
    """Dispatch by tag: ``add``, ``mul``, ``relu`` or ``scale`` (b is the scalar)."""
    if op == "add":
        return add(a, b)
    if op == "mul":
        return mul(a, b)
    if op == "relu":
        return relu(a)
    if op == "scale":
        return scale(a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _record("reshape", (a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _record("transpose", (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inv),))


def sum_all(a: Tensor) -> Tensor:
    shape, dt = a.shape, a.data.dtype
    return _record("sum", (a,), np.asarray(a.data.sum(), dtype=dt), lambda g: (np.broadcast_to(g, shape).astype(dt),))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis; ``-inf`` entries get probability exactly 0."""
    xd = x.data
    m = xd.max(axis=-1, keepdims=True)
    if np.any(np.isneginf(m)):
        raise ValueError("softmax: a slice is entirely -inf, no valid distribution")
    e = np.exp(xd - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax", (x,), y, fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs last axis {d}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat * gain.data + bias.data
    lead = tuple(range(xd.ndim - 1))

    def fn(g):
        gx = None
        if x.requires_grad:
            dxhat = g * gain.data
            gx = rstd * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
        ggain = (g * xhat).sum(axis=lead) if gain.requires_grad else None
        gbias = g.sum(axis=lead) if bias.requires_grad else None
        return (gx, ggain, gbias)

    return _record("layer_norm", (x, gain, bias), out.astype(xd.dtype, copy=False), fn)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = int(ids.max()) if ids.max() >= V else int(ids.min())
        raise IndexError(f"embedding id {bad} out of range for table of {V} rows")
    shape = table.shape

    def fn(g):
        gt = np.zeros(shape, dtype=g.dtype)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return _record("embedding", (table,), table.data[ids], fn)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity (and unrecorded) when ``rate == 0``."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return _record("dropout", (x,), x.data * keep, lambda g: (g * keep,))


def cross_entropy(
    logits: Tensor,
    targets,
    ignore_id: int = 0,
    denominator: float | None = None,
    label_smoothing: float = 0.0,
) -> Tensor:
    """Mean token-level negative log-likelihood over non-ignored positions.

    ``denominator`` overrides the count of non-ignored targets, which lets
    several micro-batches share one normaliser. Ignored positions contribute
    neither loss nor gradient.
    """
    V = logits.shape[-1]
    x = logits.data.reshape(-1, V)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    if t.shape[0] != x.shape[0]:
        raise DimensionError(f"cross_entropy: {x.shape[0]} logit rows vs {t.shape[0]} targets")
    mask = t != ignore_id
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross_entropy: every target position is padding")
    if np.any(t[mask] >= V) or np.any(t < 0):
        raise IndexError("cross_entropy: target id out of range")
    denom = float(count if denominator is None else denominator)
    m = x.max(axis=-1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(t.shape[0])
    tt = np.where(mask, t, 0)
    nll = -logp[rows, tt]
    if label_smoothing > 0.0:
        nll = (1.0 - label_smoothing) * nll - label_smoothing * logp.mean(axis=-1)
    loss = (nll * mask).sum() / denom
    shape = logits.shape

    def fn(g):
        p = np.exp(logp)
        target = np.zeros_like(p)
        target[rows, tt] = 1.0 - label_smoothing
        if label_smoothing > 0.0:
            target += label_smoothing / V
        gx = (p - target) * (mask[:, None] / denom) * g
        return (gx.reshape(shape),)

    return _record("cross_entropy", (logits,), np.asarray(loss, dtype=x.dtype), fn)


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    refine_above: float = 1e-4,
) -> float:
    """Max relative error between backward's gradient and central differences.

    ``x`` must be a leaf tensor that ``f`` reads; its values are perturbed in
    place and restored. The relative error per coordinate uses the
    denominator ``max(|analytic|, |numeric|, 1e-8)``. With ``max_coords`` only
    a random subset of coordinates is probed.

    Coordinates whose three-point error exceeds ``refine_above`` are
    re-estimated with the five-point stencil, whose O(h^4) truncation error
    matters for gradients near the 1e-8 floor.
    """
    if not x.requires_grad:
        x.requires_grad = True
    saved_grad = x.grad
    x.grad = np.zeros_like(x.data)
    with Tape():
        loss = f(x)
        backward(loss)
    analytic = x.grad.copy()
    x.grad = saved_grad

    flat = x.data.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(flat.size, size=max_coords, replace=False)
    worst = 0.0
    def at(i, v):
        orig = flat[i]
        flat[i] = v
        try:
            return float(f(x).data)
        finally:
            flat[i] = orig

    with no_grad():
        for i in coords:
            orig = flat[i]
            fp, fm = at(i, orig + h), at(i, orig - h)
            num = (fp - fm) / (2.0 * h)
            ana = float(analytic.reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if err > refine_above:
                fpp, fmm = at(i, orig + 2 * h), at(i, orig - 2 * h)
                num = (8.0 * (fp - fm) - (fpp - fmm)) / (12.0 * h)
                err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if err > worst or math.isnan(err):
                worst = err
    return worst
