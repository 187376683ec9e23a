"""Dense reverse-mode automatic differentiation on numpy arrays.

Operations on :class:`Tensor` record themselves on the active :class:`Tape`
(entered with ``with Tape() as tape:``). :func:`backward` walks the tape in
reverse and accumulates gradients into every tensor created with
``requires_grad=True``.

Only the primitives the transformer stack needs are provided.
"""
from __future__ import annotations

import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64
LN_EPS = 1e-5

_state = threading.local()


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _active_tape() -> "Tape | None":
    return getattr(_state, "tape", None)


debug_checks = False
"""When true, every primitive output is checked for NaN/Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DEFAULT_DTYPE) if not isinstance(data, np.ndarray) else data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __getitem__(self, index):
        return slice_(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


class Tape:
    """Ordered record of primitive applications.

    Each record is ``(output, inputs, adjoint)`` where ``adjoint`` maps the
    output gradient to a tuple of input gradients (``None`` for inputs that
    need none).
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._prev: Tape | None = None

    def __enter__(self) -> "Tape":
        self._prev = _active_tape()
        _state.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _state.tape = self._prev

    def __len__(self) -> int:
        return len(self.records)


class no_grad:
    """Suspend recording (evaluation-only forward passes)."""

    def __enter__(self):
        self._prev = _active_tape()
        _state.tape = None
        return self

    def __exit__(self, *exc):
        _state.tape = self._prev


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], adjoint: Callable) -> Tensor:
    if debug_checks and not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"non-finite output from {adjoint.__qualname__.split('.')[0]}")
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.records.append((out, tuple(inputs), adjoint))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "add")
    sa, sb = a.shape, b.shape

    def adjoint(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record(a.data + b.data, (a, b), adjoint)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape

    def adjoint(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _record(a.data - b.data, (a, b), adjoint)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def adjoint(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(ad * bd, (a, b), adjoint)


def square(a: Tensor) -> Tensor:
    ad = a.data

    def adjoint(g):
        return (2.0 * ad * g,)

    return _record(ad * ad, (a,), adjoint)


def log(a: Tensor, floor: float = 0.0) -> Tensor:
    """Natural log; inputs below ``floor`` are clamped and get zero gradient."""
    ad = a.data
    if floor > 0.0:
        clipped = np.maximum(ad, floor)
        live = ad >= floor
    else:
        clipped, live = ad, None

    def adjoint(g):
        ga = g / clipped
        if live is not None:
            ga = np.where(live, ga, 0.0)
        return (ga,)

    return _record(np.log(clipped), (a,), adjoint)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def adjoint(g):
        return (g * pos,)

    return _record(a.data * pos, (a,), adjoint)


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} are incompatible")
    try:
        out = ad @ bd
    except ValueError:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} are incompatible") from None

    def adjoint(g):
        ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), adjoint)


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def adjoint(g):
        return (np.transpose(g, inv),)

    return _record(np.transpose(a.data, axes), (a,), adjoint)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None

    def adjoint(g):
        return (g.reshape(src),)

    return _record(out, (a,), adjoint)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat along {axis}: shapes {shapes} disagree") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def adjoint(g):
        return tuple(
            np.take(g, np.arange(bounds[k], bounds[k + 1]), axis=axis) for k in range(len(tensors))
        )

    return _record(out, tensors, adjoint)


def slice_(a: Tensor, index) -> Tensor:
    src = a.shape
    out = a.data[index]

    def adjoint(g):
        full = np.zeros(src, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _record(np.array(out, copy=True), (a,), adjoint)


def take_rows(table: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows ``table[index]``; ``index`` may have any shape."""
    index = np.asarray(index)
    n = table.shape[0]

    def adjoint(g):
        full = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(full, index.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (full,)

    if index.size and (index.min() < 0 or index.max() >= n):
        raise ShapeError(f"take_rows: index out of range for table of {n} rows")
    return _record(table.data[index], (table,), adjoint)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _record(np.asarray(out), (a,), adjoint)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# neural-net primitives


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` (broadcastable, True=keep) adds -inf elsewhere.

    Rows with no kept entry would be undefined; callers guarantee at least one
    kept entry per row (the diagonal is always attendable in attention).
    """
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def adjoint(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record(y, (a,), adjoint)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    n = x.shape[-1]

    def adjoint(g):
        ggamma = _unbroadcast(g * xhat, gd.shape) if gamma.requires_grad else None
        gbeta = _unbroadcast(g, beta.shape) if beta.requires_grad else None
        gx = None
        if a.requires_grad:
            dxhat = g * gd
            gx = inv / n * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        return gx, ggamma, gbeta

    return _record(xhat * gd + beta.data, (a, gamma, beta), adjoint)


def dropout(a: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout: scale kept units by 1/(1-p) in training, identity otherwise."""
    if not train or p <= 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= p) / (1.0 - p)

    def adjoint(g):
        return (g * keep,)

    return _record(a.data * keep, (a,), adjoint)


def cross_entropy_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-row cross entropy ``-log softmax(logits)[label]``, shape ``logits.shape[:-1]``."""
    x = logits.data
    labels = np.asarray(labels)
    shifted = x - x.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]

    def adjoint(g):
        grad = np.exp(logp)
        np.put_along_axis(
            grad, labels[..., None], np.take_along_axis(grad, labels[..., None], -1) - 1.0, -1
        )
        return (grad * g[..., None],)

    return _record(-picked, (logits,), adjoint)


def sq_l2(a, b) -> Tensor:
    """Squared Euclidean distance along the last axis."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data, "sq_l2")
    diff = a.data - b.data

    def adjoint(g):
        gd = 2.0 * diff * g[..., None]
        return _unbroadcast(gd, a.shape), _unbroadcast(-gd, b.shape)

    return _record((diff * diff).sum(axis=-1), (a, b), adjoint)


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data.copy())


# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] = ()) -> list[np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf reachable on ``tape``.

    Returns the gradients of ``params`` in order; parameters not on any path
    to the loss get zeros.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.records:
        raise ValueError("backward on an empty tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    produced = {id(rec[0]) for rec in tape.records}
    for out, inputs, adjoint in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, adjoint(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g if leaf.grad is None else leaf.grad + g
    out = []
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        out.append(p.grad)
    return out


def gradient_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values; it must
    be deterministic (dropout off, fixed batch).
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError("gradient_check requires float64 parameters")
        p.grad = None
    with Tape() as tape:
        loss = f()
    analytic = [g.copy() for g in backward(tape, loss, params)]
    with no_grad():
        if f().data != loss.data:
            raise ValueError("gradient_check: f is not deterministic (disable dropout)")

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g_ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            with no_grad():
                flat[c] = orig + eps
                up = float(f().data)
                flat[c] = orig - eps
                down = float(f().data)
            flat[c] = orig
            fd = (up - down) / (2 * eps)
            ad = float(g_ad.reshape(-1)[c])
            rel = abs(ad - fd) / max(1e-8, abs(ad) + abs(fd))
            worst = max(worst, rel)
    for p in params:
        p.grad = None
    return worst


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))
