"""Reverse-mode automatic differentiation on numpy arrays.

The engine is deliberately small. A Tensor wraps an ndarray, remembers the
tensors it was computed from, and knows how to push an incoming gradient one
step backward. backward() walks the graph iteratively in reverse topological
order, so deep compositions (long unrolled sequences, stacked solver steps)
never hit the recursion limit.

Gradients accumulate across backward passes until zero_grad() is called,
matching the usual training-loop contract.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, MaskingError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over the axes numpy broadcast to produce grad.shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    pinched = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if pinched:
        grad = grad.sum(axis=pinched, keepdims=True)
    return grad


class Tensor:
    """An ndarray with an optional gradient and a link into the graph.

    Only float32 and float64 payloads are allowed; anything else is cast to
    float64 on construction. The wrapped array is not copied.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
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

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        """A view of the same data cut loose from the graph."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, gradient=None) -> None:
        """Accumulate d(self)/d(leaf) into .grad for every tensor upstream.

        Without an explicit seed gradient, self must be a scalar.
        """
        if not self.requires_grad:
            raise ContractError("backward() on a tensor that does not require grad")
        if gradient is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() without a gradient needs a scalar, got shape {self.shape}"
                )
            seed = np.ones_like(self.data)
        else:
            seed = np.array(gradient, dtype=self.data.dtype, copy=True)
            if seed.shape != self.data.shape:
                raise ShapeError(
                    f"seed gradient shape {seed.shape} != tensor shape {self.shape}"
                )

        order = _topo_order(self)
        flowing: dict[int, np.ndarray] = {id(self): seed}
        for node in reversed(order):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                held = flowing.get(pid)
                flowing[pid] = pg if held is None else held + pg

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def relu(self):
        return relu(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


def _topo_order(root: Tensor) -> list[Tensor]:
    """Post-order DFS without recursion; root ends up last."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _coerce(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float)) and dtype is not None:
        return Tensor(np.asarray(x, dtype=dtype))
    return Tensor(x)


def _from_op(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a.dtype)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _from_op(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a.dtype)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _from_op(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a.dtype)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _from_op(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a = _coerce(a)
    b = _coerce(b, a.dtype)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _from_op(out, (a, b), vjp)


def neg(a) -> Tensor:
    a = _coerce(a)
    return _from_op(-a.data, (a,), lambda g: (-g,))


def power(a, exponent) -> Tensor:
    """Elementwise a ** p for a python scalar exponent."""
    if not isinstance(exponent, (int, float)):
        raise ContractError("power() exponent must be a python scalar")
    a = _coerce(a)
    p = float(exponent)
    out = a.data**p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _from_op(out, (a,), vjp)


def relu(a) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is taken to be 0."""
    a = _coerce(a)
    out = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _from_op(out, (a,), vjp)


def log(a, floor: float | None = None) -> Tensor:
    """Natural log. With a floor, inputs are clamped below at that value
    (and receive zero gradient there); without one, nonpositive inputs are
    rejected.
    """
    a = _coerce(a)
    if floor is None:
        if np.any(a.data <= 0):
            raise ContractError("log() of a nonpositive value; pass a floor to clamp")
        safe = a.data
        alive = None
    else:
        safe = np.maximum(a.data, floor)
        alive = a.data >= floor
    out = np.log(safe)

    def vjp(g):
        gx = g / safe
        if alive is not None:
            gx = gx * alive
        return (gx,)

    return _from_op(out, (a,), vjp)


# -- linear algebra ------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands must be at least 2-D and
    leading batch dimensions broadcast.
    """
    a = _coerce(a)
    b = _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-D+ operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _from_op(out, (a, b), vjp)


# -- normalization and attention pieces ----------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax along one axis with masking support.

    Entries equal to -inf act as mask sentinels and get probability 0.
    A slice that is entirely masked has no valid target and raises
    MaskingError. NaN or +inf entries are rejected.
    """
    a = _coerce(a)
    x = a.data
    if np.isnan(x).any() or np.isposinf(x).any():
        raise ContractError("softmax input contains NaN or +inf")
    top = np.max(x, axis=axis, keepdims=True)
    if np.isneginf(top).any():
        raise MaskingError("softmax slice is fully masked (all -inf)")
    expd = np.exp(x - top)
    y = expd / expd.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    return _from_op(y, (a,), vjp)


def layer_norm(a, gain: "Tensor | None" = None, bias: "Tensor | None" = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply an
    optional elementwise affine.
    """
    a = _coerce(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    normed = centered * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * normed).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - normed * gxm),)

    out = _from_op(normed, (a,), vjp)
    if gain is not None:
        out = mul(out, gain)
    if bias is not None:
        out = add(out, bias)
    return out


# -- reductions -----------------------------------------------------------


def _spread(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    """Inverse of a reduction: expand g back over the reduced axes."""
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % len(shape) for ax in axes)
    if not keepdims:
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        return (_spread(g, a.shape, axis, keepdims),)

    return _from_op(np.asarray(out), (a,), vjp)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _coerce(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.shape[ax % a.ndim] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        return (_spread(g, a.shape, axis, keepdims) / count,)

    return _from_op(np.asarray(out), (a,), vjp)


# -- shape manipulation ----------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.shape),)

    return _from_op(out, (a,), vjp)


def transpose(a, axes=None) -> Tensor:
    a = _coerce(a)
    out = a.data.transpose(axes)
    inverse = None if axes is None else tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _from_op(out, (a,), vjp)


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = _coerce(a)
    out = a.data.swapaxes(ax1, ax2)

    def vjp(g):
        return (g.swapaxes(ax1, ax2),)

    return _from_op(out, (a,), vjp)


def getitem(a, idx) -> Tensor:
    a = _coerce(a)
    out = a.data[idx]

    def vjp(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        return (buf,)

    return _from_op(out, (a,), vjp)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_coerce(t) for t in tensors]
    if not parts:
        raise ContractError("concat() of an empty sequence")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _from_op(out, parts, vjp)


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    parts = [_coerce(t) for t in tensors]
    if not parts:
        raise ContractError("stack() of an empty sequence")
    out = np.stack([p.data for p in parts], axis=axis)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(parts)))

    return _from_op(out, parts, vjp)


# -- gradient verification --------------------------------------------------


@dataclass
class GradReport:
    """Outcome of a finite-difference check of one scalar function."""

    max_rel_err: float
    entries_checked: int
    worst_input: int
    worst_index: tuple
    analytic: float
    numeric: float

    def ok(self, tol: float) -> bool:
        return self.max_rel_err < tol

    def __str__(self) -> str:
        return (
            f"max rel err {self.max_rel_err:.3e} over {self.entries_checked} entries "
            f"(input {self.worst_input} at {self.worst_index}: "
            f"analytic {self.analytic:.6e}, numeric {self.numeric:.6e})"
        )


def grad_check(fn, inputs: Sequence[Tensor], eps: float = 1e-6,
               sample: int | None = None, seed: int = 0,
               floor: float = 1e-12) -> GradReport:
    """Compare analytic gradients of fn(*inputs) against central differences.

    Inputs must be float64. Every input with requires_grad=True is checked,
    elementwise, with step eps scaled by the entry's magnitude. The relative
    error of an entry is |a - n| / max(|a|, |n|, floor). Grads of the checked
    inputs are cleared on entry. With sample set, at most that many entries
    per input are probed (chosen deterministically from seed).

    floor sets the gradient magnitude below which the comparison turns
    absolute: central differences of a scalar loss cannot resolve entries
    near machine-noise / eps, so deep composites should raise it to the
    smallest gradient they care about.
    """
    checked = [t for t in inputs if isinstance(t, Tensor) and t.requires_grad]
    if not checked:
        raise ContractError("grad_check needs at least one input with requires_grad")
    for t in checked:
        if t.dtype != np.float64:
            raise ContractError("grad_check requires float64 inputs")
        t.grad = None

    out = fn(*inputs)
    if not isinstance(out, Tensor) or out.size != 1:
        raise ContractError("grad_check function must return a scalar Tensor")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in checked]

    rng = np.random.default_rng(seed)
    worst = (0.0, 0, (), 0.0, 0.0)
    total = 0
    with no_grad():
        for which, t in enumerate(checked):
            flat = t.data.reshape(-1)
            idxs = np.arange(flat.size)
            if sample is not None and flat.size > sample:
                idxs = rng.choice(flat.size, size=sample, replace=False)
            for i in idxs:
                if not np.isfinite(flat[i]):
                    continue  # mask sentinels are constants, not parameters
                h = eps * max(1.0, abs(flat[i]))
                keep = flat[i]
                flat[i] = keep + h
                hi = fn(*inputs).item()
                flat[i] = keep - h
                lo = fn(*inputs).item()
                flat[i] = keep
                numeric = (hi - lo) / (2.0 * h)
                a = analytic[which].reshape(-1)[i]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), floor, 1e-12)
                total += 1
                if rel > worst[0]:
                    idx = np.unravel_index(i, t.shape) if t.ndim else ()
                    worst = (rel, which, tuple(int(v) for v in idx), float(a), numeric)

    return GradReport(
        max_rel_err=worst[0],
        entries_checked=total,
        worst_input=worst[1],
        worst_index=worst[2],
        analytic=worst[3],
        numeric=worst[4],
    )
