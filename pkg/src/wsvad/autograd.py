"""Minimal reverse-mode differentiation over dense float64 matrices and vectors.

Provides exactly the primitives the training pipeline needs: matmul,
broadcasting elementwise arithmetic, reductions, softmax, layer norm, and a
finite-difference gradient checker. Every forward output is verified finite;
NaN or Inf anywhere raises :class:`NumericsError` so a training step can abort
instead of silently propagating garbage.

Gradient recording is process-wide: ops build graph nodes whenever gradients
are enabled and any input requires them. One training step owns the graph
exclusively; pure forward evaluation of frozen parameters is safe to run
concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError, NumericsError

_grad_enabled = True
_finite_checks = True


def is_grad_enabled() -> bool:
    return _grad_enabled


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf scanning (on by default)."""
    global _finite_checks
    _finite_checks = bool(enabled)


class no_grad:
    """Context manager that disables graph recording for its body."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    """Dense float64 array plus the bookkeeping needed for backpropagation.

    Leaves created with ``requires_grad=True`` accumulate gradients in
    ``.grad`` after :func:`backward`. Intermediate tensors never store
    gradients; their contributions live only for the duration of a backward
    pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    # Make numpy defer to the reflected operators below instead of trying to
    # broadcast over Tensor objects.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = _parents
        self._backward: Callable[[np.ndarray], tuple] | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def zero_grad(self) -> None:
        self.grad = None

    def sum(self, axis=None, keepdims=False) -> "Tensor":
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False) -> "Tensor":
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)


def parameter(data) -> Tensor:
    """Create a trainable leaf."""
    return Tensor(data, requires_grad=True, op="parameter")


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data, parents: tuple[Tensor, ...], bw, op: str) -> Tensor:
    if _finite_checks and not math.isfinite(data.sum()):
        # A finite array can still overflow its sum; only a true NaN/Inf in
        # the elements is an error.
        if not np.all(np.isfinite(data)):
            raise NumericsError(f"non-finite values produced by op {op!r}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, True, _parents=parents, _backward=bw, op=op)
    return Tensor(data, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def bw(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def bw(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        return (-g,)

    return _node(-a.data, (a,), bw, "neg")


def maximum(a, b) -> Tensor:
    """Elementwise max; at ties the subgradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def bw(g):
        ga = _unbroadcast(g * take_a, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ~take_a, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw, "maximum")


def minimum(a, b) -> Tensor:
    """Elementwise min; at ties the subgradient routes to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def bw(g):
        ga = _unbroadcast(g * take_a, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ~take_a, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), bw, "minimum")


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient is zero at and beyond the saturation points."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bw(g):
        return (g * inside,)

    return _node(out, (a,), bw, "clamp")


def relu(a) -> Tensor:
    """max(0, x) with subgradient 0 at the kink (zero branch)."""
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _node(a.data * mask, (a,), bw, "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def bw(g):
        return (g * out,)

    return _node(out, (a,), bw, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log requires strictly positive inputs; clamp first")
    out = np.log(a.data)

    def bw(g):
        return (g / a.data,)

    return _node(out, (a,), bw, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt requires nonnegative inputs")
    out = np.sqrt(a.data)

    def bw(g):
        return (g / (2.0 * out),)

    return _node(out, (a,), bw, "sqrt")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    d = a.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)

    def bw(g):
        return (g * out * (1.0 - out),)

    return _node(out, (a,), bw, "sigmoid")


# ---------------------------------------------------------------------------
# Shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape
    out = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(old),)

    return _node(out, (a,), bw, "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")

    def bw(g):
        return (g.T,)

    return _node(a.data.T, (a,), bw, "transpose")


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.data[key]

    def bw(g):
        gx = np.zeros_like(a.data)
        gx[key] = g
        return (gx,)

    return _node(out, (a,), bw, "getitem")


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of zero tensors")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = np.cumsum([p.data.shape[axis] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(out, tuple(parts), bw, "concat")


# ---------------------------------------------------------------------------
# Matrix product and reductions
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands with numpy semantics."""
    a, b = as_tensor(a), as_tensor(b)
    an, bn = a.ndim, b.ndim
    if an not in (1, 2) or bn not in (1, 2):
        raise DimensionError(f"matmul supports vectors and matrices, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    if an == 2 and bn == 2:
        def bw(g):
            ga = g @ b.data.T if a.requires_grad else None
            gb = a.data.T @ g if b.requires_grad else None
            return ga, gb
    elif an == 2:  # matrix @ vector -> vector
        def bw(g):
            ga = g[:, None] * b.data[None, :] if a.requires_grad else None
            gb = a.data.T @ g if b.requires_grad else None
            return ga, gb
    elif bn == 2:  # vector @ matrix -> vector
        def bw(g):
            ga = b.data @ g if a.requires_grad else None
            gb = a.data[:, None] * g[None, :] if b.requires_grad else None
            return ga, gb
    else:  # vector @ vector -> scalar
        def bw(g):
            ga = g * b.data if a.requires_grad else None
            gb = g * a.data if b.requires_grad else None
            return ga, gb

    return _node(out, (a, b), bw, "matmul")


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, a.shape).copy(),)

    return _node(out, (a,), bw, "sum")


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    if n == 0:
        raise DimensionError("mean over an empty axis")
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def tensor_max(a, axis=None) -> Tensor:
    """Max reduction; gradient flows to the first occurrence of the maximum."""
    a = as_tensor(a)
    d = a.data
    if d.size == 0:
        raise DimensionError("max of an empty tensor")
    if axis is None:
        flat = int(d.argmax())

        def bw(g):
            gx = np.zeros_like(d)
            gx.flat[flat] = g
            return (gx,)

        return _node(d.max(), (a,), bw, "max")

    idx = np.expand_dims(d.argmax(axis=axis), axis)

    def bw(g):
        gx = np.zeros_like(d)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis)
        return (gx,)

    return _node(d.max(axis=axis), (a,), bw, "max")


def tensor_min(a, axis=None) -> Tensor:
    """Min reduction; gradient flows to the first occurrence of the minimum."""
    a = as_tensor(a)
    d = a.data
    if d.size == 0:
        raise DimensionError("min of an empty tensor")
    if axis is None:
        flat = int(d.argmin())

        def bw(g):
            gx = np.zeros_like(d)
            gx.flat[flat] = g
            return (gx,)

        return _node(d.min(), (a,), bw, "min")

    idx = np.expand_dims(d.argmin(axis=axis), axis)

    def bw(g):
        gx = np.zeros_like(d)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis)
        return (gx,)

    return _node(d.min(axis=axis), (a,), bw, "min")


# ---------------------------------------------------------------------------
# Fused neural ops
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    """Shift-invariant softmax; outputs along ``axis`` sum to 1."""
    a = as_tensor(a)
    d = a.data
    if d.ndim == 0 or d.shape[axis] == 0:
        raise DimensionError("softmax over an empty axis")
    e = np.exp(d - d.max(axis=axis, keepdims=True))
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), bw, "softmax")


def layer_norm(a, eps: float = 1e-12) -> Tensor:
    """Normalize the last axis to mean 0, variance 1 (no affine part).

    ``eps`` guards zero-variance rows: a constant row maps to the zero row.
    """
    a = as_tensor(a)
    d = a.data
    if d.shape[-1] < 1:
        raise DimensionError("layer_norm needs at least one feature")
    mu = d.mean(axis=-1, keepdims=True)
    xc = d - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gy = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gy),)

    return _node(out, (a,), bw, "layer_norm")


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------

class GradTape:
    """Ordered record of the ops reachable from a root, leaves first.

    Backward traversal walks the record once, in reverse topological order,
    accumulating gradients into a scratch map and finally into leaf ``.grad``.
    """

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root: Tensor) -> "GradTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def backprop(self, root: Tensor, seed: np.ndarray) -> None:
        grads: dict[int, np.ndarray] = {id(root): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into each reachable leaf's ``.grad``."""
    if root.shape != ():
        raise ContractError(f"backward requires a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        raise ContractError("backward on a tensor with no recorded graph")
    GradTape.from_root(root).backprop(root, np.ones(()))


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckResult:
    """Worst-case agreement between reverse-mode and central differences."""

    max_rel_error: float
    per_param: dict[str, float]

    def __repr__(self) -> str:
        return f"GradCheckResult(max_rel_error={self.max_rel_error:.3e})"


def _rel_error(a: float, n: float) -> float:
    # Central differences on an O(1) function cannot resolve gradients much
    # below ~1e-4 relative; tiny pairs are compared absolutely instead so the
    # noise floor does not register as disagreement.
    denom = max(abs(a), abs(n))
    if denom < 1e-4:
        return abs(a - n)
    return abs(a - n) / denom


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-5,
) -> GradCheckResult:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar.
    Near-zero gradient pairs (below 1e-6) are compared absolutely so that
    finite-difference noise on inactive hinges does not register as error.
    """
    for p in params.values():
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }
    for p in params.values():
        p.zero_grad()

    worst: dict[str, float] = {}
    with no_grad():
        for name, p in params.items():
            err = 0.0
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f().item()
                flat[i] = orig - eps
                lo = f().item()
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                err = max(err, _rel_error(float(analytic[name].reshape(-1)[i]), numeric))
            worst[name] = err
    return GradCheckResult(max(worst.values(), default=0.0), worst)
