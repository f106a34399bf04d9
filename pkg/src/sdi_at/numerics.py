"""Dense float64 arithmetic with a small reverse-mode autodiff tape.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  A :class:`Var`
wraps one and records how it was produced so that :func:`value_and_grad` can
walk the graph backwards.  Every primitive accepts ``Var`` or array operands;
arrays are treated as constants.
"""

from __future__ import annotations

import builtins
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

SQRT_GUARD = 1e-24


class DimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class CapabilityError(TypeError):
    """Raised when a graph contains an operation without a backward rule."""


class Var:
    __slots__ = ("value", "parents", "backward", "requires_grad", "name")

    # numpy ufuncs on a Var have no backward rule
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        raise CapabilityError(f"unsupported primitive {ufunc.__name__!r} on a differentiable value")

    def __array_function__(self, func, types, args, kwargs):
        raise CapabilityError(f"unsupported primitive {func.__name__!r} on a differentiable value")

    def __init__(self, value, parents=(), backward=None, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward = backward
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var({self.value!r}, requires_grad={self.requires_grad})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)


@dataclass
class GradResult:
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


def as_var(x) -> Var:
    if isinstance(x, Var):
        return x
    if isinstance(x, (bool, str, bytes, complex)) or x is None:
        raise CapabilityError(f"cannot use {type(x).__name__} in a differentiable expression")
    arr = np.asarray(x)
    if arr.dtype.kind not in "biuf":
        raise CapabilityError(f"unsupported dtype {arr.dtype} in a differentiable expression")
    return Var(arr)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def is_var(x) -> bool:
    return isinstance(x, Var)


def _node(value, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Var(value, parents if req else (), backward if req else None, req)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"shapes {a.shape} and {b.shape} do not broadcast") from exc


# -- primitives ------------------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a.value, b.value)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a.value, b.value)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a.value, b.value)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    _check_broadcast(a.value, b.value)
    out = a.value / b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape),
                            _unbroadcast(-g * out / b.value, b.shape)))


def neg(a) -> Var:
    a = as_var(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return _node(a.value @ b.value, (a, b), backward)


def transpose(a) -> Var:
    a = as_var(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")
    return _node(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Var:
    a = as_var(a)
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc
    return _node(out, (a,), lambda g: (g.reshape(a.shape),))


def relu(a) -> Var:
    a = as_var(a)
    mask = a.value > 0
    return _node(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def square(a) -> Var:
    a = as_var(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def sqrt(a) -> Var:
    """Square root whose derivative is taken as 0 below ``SQRT_GUARD``."""
    a = as_var(a)
    out = np.sqrt(np.maximum(a.value, 0.0))
    ok = a.value >= SQRT_GUARD
    safe = np.where(ok, out, 1.0)
    return _node(out, (a,), lambda g: (np.where(ok, 0.5 * g / safe, 0.0),))


def log(a) -> Var:
    a = as_var(a)
    if np.any(a.value <= 0):
        raise NumericError("log of a non-positive value")
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def maximum(a, floor: float) -> Var:
    """Elementwise ``max(a, floor)`` for a constant floor; gradient flows where a >= floor."""
    a = as_var(a)
    keep = a.value >= floor
    return _node(np.where(keep, a.value, floor), (a,), lambda g: (g * keep,))


def sum(a, axis=None) -> Var:  # noqa: A001 - mirrors numpy naming
    a = as_var(a)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(a.value.sum(axis=axis), (a,), backward)


def mean(a, axis=None) -> Var:
    a = as_var(a)
    n = a.value.size if axis is None else a.shape[axis]
    return div(sum(a, axis=axis), float(n))


def max(a, axis=-1) -> Var:  # noqa: A001
    """Maximum along ``axis``; the subgradient goes to the lowest index among ties."""
    a = as_var(a)
    idx = np.argmax(a.value, axis=axis)
    out = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        grad = np.zeros_like(a.value)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _node(out, (a,), backward)


def softmax(z, axis=-1) -> Var:
    z = as_var(z)
    if z.shape[axis] < 2:
        raise DimensionError("softmax needs at least two classes")
    if not np.all(np.isfinite(z.value)):
        raise NumericError("softmax of non-finite logits")
    shifted = z.value - z.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _node(p, (z,), backward)


# -- differentiation -------------------------------------------------------

def _toposort(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backprop(out: Var) -> dict[int, np.ndarray]:
    if out.value.shape != ():
        raise DimensionError(f"can only differentiate a scalar, got shape {out.shape}")
    grads = {id(out): np.ones((), dtype=np.float64)}
    for node in reversed(_toposort(out)):
        g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
        if g is None or not node.parents:
            continue
        if node.backward is None:
            raise CapabilityError("graph node has no backward rule")
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    return grads


def value_and_grad(fn: Callable, wrt) -> GradResult:
    """Evaluate ``fn`` and its gradient with respect to ``wrt``.

    ``wrt`` is either a mapping of name -> array, in which case ``fn`` receives a
    dict of leaf ``Var`` objects, or a single array, in which case ``fn`` receives
    one ``Var`` and the gradient is keyed ``"x"``.
    """
    single = not isinstance(wrt, Mapping)
    items = {"x": wrt} if single else dict(wrt)
    leaves = {k: Var(np.array(v, dtype=np.float64), requires_grad=True, name=k) for k, v in items.items()}
    out = fn(leaves["x"] if single else leaves)
    if not isinstance(out, Var):
        raise CapabilityError("expression does not depend on a differentiable input")
    if not np.isfinite(out.value).all():
        raise NumericError(f"objective evaluated to {out.value}")
    table = backprop(out)
    grads = {}
    for k, leaf in leaves.items():
        g = table.get(id(leaf))
        grads[k] = np.zeros_like(leaf.value) if g is None else np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        if not np.isfinite(grads[k]).all():
            raise NumericError(f"non-finite gradient for {k!r}")
    return GradResult(float(out.value), grads)


def evaluate(fn: Callable, at) -> float:
    single = not isinstance(at, Mapping)
    arg = as_var(np.asarray(at, dtype=np.float64)) if single else {k: as_var(np.asarray(v, dtype=np.float64)) for k, v in at.items()}
    return float(value_of(fn(arg)))


def check_gradient(fn: Callable, wrt, h: float = 1e-5, samples: int = 20, seed: int = 0,
                   coords: list | None = None) -> float:
    """Largest relative error between analytic and central-difference partials.

    ``samples`` coordinates are drawn at random across all inputs unless an
    explicit list of ``(name, flat_index)`` pairs is given.  When both partials
    are below 1e-8 in magnitude the absolute error is used instead.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    single = not isinstance(wrt, Mapping)
    point = {"x": np.array(wrt, dtype=np.float64)} if single else {k: np.array(v, dtype=np.float64) for k, v in wrt.items()}
    call = (lambda d: fn(d["x"])) if single else fn
    analytic = value_and_grad(call, point).grads

    if coords is None:
        rng = np.random.default_rng(seed)
        names = list(point)
        sizes = np.array([point[k].size for k in names])
        flat = rng.choice(sizes.sum(), size=min(samples, int(sizes.sum())), replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        coords = []
        for f in flat:
            j = int(np.searchsorted(offsets, f, side="right") - 1)
            coords.append((names[j], int(f - offsets[j])))

    worst = 0.0
    for name, i in coords:
        arr = point[name].reshape(-1)
        orig = arr[i]
        arr[i] = orig + h
        f_plus = evaluate(call, point)
        arr[i] = orig - h
        f_minus = evaluate(call, point)
        arr[i] = orig
        numeric = (f_plus - f_minus) / (2 * h)
        a = float(analytic[name].reshape(-1)[i])
        if abs(a) < 1e-8 and abs(numeric) < 1e-8:
            err = abs(a - numeric)
        else:
            err = abs(a - numeric) / builtins.max(abs(a), abs(numeric))
        worst = builtins.max(worst, err)
    return worst

