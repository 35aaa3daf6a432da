"""Reverse-mode automatic differentiation over 2-D float64 arrays.

Operations executed while a :class:`Tape` is active are recorded with their
parents; :func:`backward` walks the tape once in reverse creation order, which
is a valid reverse topological order because a node can only be created after
its parents. Outside a tape the same operations evaluate eagerly without
bookkeeping, which is what inference uses.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


class AutodiffError(RuntimeError):
    pass


class Tensor:
    """A 2-D float64 array (rows x cols) that may take part in a recorded graph."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "name")

    __array_priority__ = 100.0
    __array_ufunc__ = None  # make ndarray <op> Tensor defer to Tensor's reflected operators

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        arr = np.array(value, dtype=np.float64, copy=True)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        elif arr.ndim != 2:
            raise ValueError(f"Tensor must be 2-D, got shape {arr.shape}")
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def __repr__(self) -> str:
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        return power(self, float(exponent))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Tape:
    """Records nodes created inside ``with Tape() as tape:``."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def parameter(x, name: str | None = None) -> Tensor:
    return Tensor(x, requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _make(value: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.name = None
    out.parents = ()
    out.backward_fn = None
    out.requires_grad = False
    if _ACTIVE and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
        _ACTIVE[-1].nodes.append(out)
    return out


# elementwise binary ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape),
                            _unbroadcast(-g * out / bv, bv.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


# elementwise unary -----------------------------------------------------------

def scale(x, factor: float) -> Tensor:
    x = as_tensor(x)
    return _make(x.value * factor, (x,), lambda g: (g * factor,))


def affine(x, scale_, shift) -> Tensor:
    """``x * scale_ + shift`` with constant (broadcastable) scale and shift."""
    x = as_tensor(x)
    s = np.asarray(scale_, dtype=np.float64)
    out = x.value * s + np.asarray(shift, dtype=np.float64)
    shape = x.shape
    return _make(out, (x,), lambda g: (_unbroadcast(g * s, shape),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0.0  # subgradient 0 at the kink
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def sin(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return _make(np.sin(xv), (x,), lambda g: (g * np.cos(xv),))


def cos(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return _make(np.cos(xv), (x,), lambda g: (-g * np.sin(xv),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.value)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return _make(np.log(xv), (x,), lambda g: (g / xv,))


def power(x, exponent: float) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    out = xv ** exponent
    return _make(out, (x,), lambda g: (g * exponent * xv ** (exponent - 1.0),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.value)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def square(x) -> Tensor:
    x = as_tensor(x)
    xv = x.value
    return _make(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def softplus(x, beta: float = 1.0) -> Tensor:
    """``log(1 + exp(beta x)) / beta``, evaluated without overflow."""
    x = as_tensor(x)
    z = beta * x.value
    out = (np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))) / beta
    sig = 0.5 * (1.0 + np.tanh(0.5 * z))
    return _make(out, (x,), lambda g: (g * sig,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def elementwise(x, fn: Callable[[np.ndarray], np.ndarray],
                dfn: Callable[[np.ndarray], np.ndarray]) -> Tensor:
    """Custom elementwise primitive with a user-supplied derivative."""
    x = as_tensor(x)
    xv = x.value
    return _make(np.asarray(fn(xv), dtype=np.float64), (x,), lambda g: (g * dfn(xv),))


# structural ------------------------------------------------------------------

def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along columns."""
    xs = [as_tensor(x) for x in xs]
    widths = [x.cols for x in xs]
    splits = np.cumsum(widths)[:-1]
    return _make(np.concatenate([x.value for x in xs], axis=1), tuple(xs),
                 lambda g: np.split(g, splits, axis=1))


def vstack(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along rows."""
    xs = [as_tensor(x) for x in xs]
    splits = np.cumsum([x.rows for x in xs])[:-1]
    return _make(np.concatenate([x.value for x in xs], axis=0), tuple(xs),
                 lambda g: np.split(g, splits, axis=0))


def column(x, j: int) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[:, j:j + 1] = g
        return (full,)

    return _make(x.value[:, j:j + 1], (x,), bw)


def total(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    return _make(np.array([[x.value.sum()]]), (x,), lambda g: (np.full(shape, g[0, 0]),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    shape = x.shape
    n = x.value.size
    return _make(np.array([[x.value.mean()]]), (x,),
                 lambda g: (np.full(shape, g[0, 0] / n),))


def add_n(xs: Iterable[Tensor]) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    out = xs[0].value.copy()
    for x in xs[1:]:
        out = out + x.value
    shapes = [x.shape for x in xs]
    return _make(out, tuple(xs), lambda g: [_unbroadcast(g, s) for s in shapes])


# backward --------------------------------------------------------------------

def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad.

    Intermediate gradients are released after use. Accumulation order is the
    reverse tape order, hence deterministic.
    """
    if loss.value.size != 1:
        raise AutodiffError(f"loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return  # constant loss: every gradient is zero
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.backward_fn is None:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg


def grad(loss_fn: Callable[[], Tensor], params: Sequence[Tensor]) -> tuple[float, list[np.ndarray]]:
    """Evaluate ``loss_fn`` on a fresh tape and return (loss, d loss / d params)."""
    for p in params:
        if not p.requires_grad:
            raise AutodiffError(f"parameter {p.name or p!r} is detached (requires_grad=False)")
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    backward(tape, loss)
    out = [p.grad if p.grad is not None else np.zeros_like(p.value) for p in params]
    for p in params:
        p.grad = None
    return float(loss.value[0, 0]), out
