"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor`.  When any input requires a
gradient the result keeps a :class:`Node` pointing at its inputs and a
backward rule.  ``Tensor.backward`` builds a :class:`Tape` (the topologically
ordered graph reachable from the output) and walks it once in reverse.

Gradient accumulation rule: leaf gradients are *added* to ``Tensor.grad``.
Calling ``backward`` twice without ``zero_grad`` therefore doubles the leaf
gradients; optimizers must clear them between steps.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording for the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Node:
    __slots__ = ("op", "inputs", "backward")

    def __init__(self, op: str, inputs: tuple, backward: Callable):
        self.op = op
        self.inputs = inputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad=None) -> None:
        Tape(self).backward(grad)

    def __repr__(self) -> str:
        tag = f", op={self.node.op}" if self.node else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: tuple, op: str, backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out.requires_grad = grad_enabled() and any(t.requires_grad for t in inputs)
    out.node = Node(op, inputs, backward) if out.requires_grad else None
    return out


class Tape:
    """Topologically ordered record of the operations behind ``output``."""

    def __init__(self, output: Tensor):
        self.output = output
        self.order: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS; graphs can be deep enough to hit recursion limits
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                self.order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for inp in t.node.inputs:
                    if inp.requires_grad and id(inp) not in seen:
                        stack.append((inp, False))

    def __len__(self) -> int:
        return len(self.order)

    def backward(self, grad=None) -> None:
        out = self.output
        if not out.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if out.size != 1:
                raise DimensionError(f"implicit gradient needs a scalar output, got {out.shape}")
            grad = np.ones_like(out.data)
        grads: dict[int, np.ndarray] = {id(out): np.asarray(grad, dtype=np.float64)}
        for t in reversed(self.order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.node is None:
                t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            for inp, ig in zip(t.node.inputs, t.node.backward(g)):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = ig if key not in grads else grads[key] + ig


# ---------------------------------------------------------------- elementwise


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")
    return _make(a.data * b.data, (a, b), "mul",
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * c, (x,), "scale", lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # subgradient at exactly 0 is 0
    return _make(np.where(x.data <= 0, 0.0, x.data), (x,), "relu", lambda g: (g * mask,))  # NaN passes through


def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _make(y, (x,), "sigmoid", lambda g: (g * y * (1.0 - y),))


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where the constant ``mask`` is true, else ``b``."""
    if a.shape != b.shape:
        raise DimensionError(f"where: shape mismatch {a.shape} vs {b.shape}")
    m = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    return _make(np.where(m, a.data, b.data), (a, b), "where",
                 lambda g: (np.where(m, g, 0.0), np.where(m, 0.0, g)))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supports ``(m,k)@(k,n)``, a stack ``(...,m,k)`` against a shared ``(k,n)``,
    and stacks with identical leading dimensions ``(...,m,k)@(...,k,n)``.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dims differ {a.shape} vs {b.shape}")
    if a.ndim == 2 and b.ndim > 2:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _make(out, (a, b), "matmul", backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: {x.shape} vs bias {b.shape}")
    n = b.shape[0]
    return _make(x.data + b.data, (x, b), "add_bias",
                 lambda g: (g, g.reshape(-1, n).sum(axis=0)))


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.shape
    return _make(x.data.reshape(shape), (x,), "reshape", lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), "transpose",
                 lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    if isinstance(idx, tuple) and any(isinstance(i, (list, np.ndarray)) for i in idx) or \
            isinstance(idx, (list, np.ndarray)):
        raise TypeError("getitem supports basic (slice/int) indexing only")

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _make(np.array(out, dtype=np.float64), (x,), "getitem", backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(data, tensors, "concat", lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: differing shapes {sorted(shapes)}")
    data = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _make(data, tensors, "stack",
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# ---------------------------------------------------------------- reductions


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.sum(x.data, axis=axis)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), "sum", backward)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return scale(sum(x, axis=axis), 1.0 / n)


# ---------------------------------------------------------------- row-wise (last axis)


def row_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), "row_softmax", backward)


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit Euclidean norm; rows with norm < eps become zero."""
    n = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    live = ~(n < eps)  # NaN rows stay live so corrupt inputs surface downstream
    safe = np.where(live, n, 1.0)
    y = np.where(live, x.data / safe, 0.0)

    def backward(g):
        gx = (g - y * (g * y).sum(axis=-1, keepdims=True)) / safe
        return (np.where(live, gx, 0.0),)

    return _make(y, (x,), "l2_normalize_rows", backward)


def standardize_rows(x: Tensor, eps: float = 1e-6) -> Tensor:
    """Z-score each row: (x - mean) / (std + eps), population std."""
    n = x.shape[-1]
    d = x.data - x.data.mean(axis=-1, keepdims=True)
    s = np.sqrt((d * d).mean(axis=-1, keepdims=True))
    a = s + eps
    y = d / a

    def backward(g):
        safe_s = np.where(s > 0, s, 1.0)
        gd = g / a - (g * d).sum(axis=-1, keepdims=True) * d / (a * a * n * safe_s)
        return (gd - gd.mean(axis=-1, keepdims=True),)

    return _make(y, (x,), "standardize_rows", backward)


def log_softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    if logits.ndim != 2:
        raise DimensionError(f"cross entropy expects (B, Q) logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    b, q = logits.shape
    if labels.shape[0] != b:
        raise DimensionError(f"{labels.shape[0]} labels for {b} logit rows")
    if labels.size and (labels.min() < 0 or labels.max() >= q):
        raise IndexError(f"label out of range [0, {q})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        return (p * (g / b),)

    return _make(np.asarray(loss), (logits,), "cross_entropy", backward)


# ---------------------------------------------------------------- convolution support


def im2col(x: Tensor, k: int, stride: int, pad: int) -> Tensor:
    """Extract k x k patches from (B, H, W, C) into (B, Ho, Wo, k*k*C).

    Column layout is (ki, kj, c) row-major, so a conv kernel stored as
    (k, k, C, F) reshapes to (k*k*C, F).
    """
    if x.ndim != 4:
        raise DimensionError(f"im2col expects (B, H, W, C), got {x.shape}")
    b, h, w, c = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    cols = np.empty((b, ho, wo, k, k, c))
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]

    def backward(g):
        g = g.reshape(b, ho, wo, k, k, c)
        gp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                gp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += g[:, :, :, i, j, :]
        return (gp[:, pad:pad + h, pad:pad + w, :],)

    return _make(cols.reshape(b, ho, wo, k * k * c), (x,), "im2col", backward)


# ---------------------------------------------------------------- verification


def check_gradients(f: Callable, x, h: float = 1e-5, max_coords: int | None = None,
                    seed: int = 0) -> float:
    """Compare autodiff gradients against central finite differences.

    ``x`` is a Tensor or a sequence of Tensors passed positionally to ``f``,
    which must return a scalar Tensor.  Returns the maximum over checked
    coordinates of ``|g_ad - g_fd| / max(1, |g_fd|)``.  ``max_coords`` caps
    the coordinates probed per tensor (chosen by a seeded generator).
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    flags = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
        if not t.data.flags.c_contiguous:  # perturbation below goes through a flat view
            t.data = np.ascontiguousarray(t.data)
    out = f(*xs)
    if out.size != 1:
        raise DimensionError(f"check_gradients needs a scalar function, got {out.shape}")
    out.backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    try:
        for t in xs:
            g_ad = np.zeros_like(t.data) if t.grad is None else t.grad
            flat = t.data.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            with no_grad():
                for i in coords:
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = f(*xs).item()
                    flat[i] = orig - h
                    fm = f(*xs).item()
                    flat[i] = orig
                    g_fd = (fp - fm) / (2.0 * h)
                    err = abs(g_ad.reshape(-1)[i] - g_fd) / max(1.0, abs(g_fd))
                    worst = max(worst, err)
    finally:
        for t, flag in zip(xs, flags):
            t.requires_grad = flag
            t.grad = None
    return worst
