"""Minimal reverse-mode automatic differentiation over numpy arrays.

Scope: exactly the operations the training objectives in this package need,
on float64 ndarrays. Every op has a dual calling convention: applied to plain
ndarrays it computes with numpy and returns an ndarray (inference shares the
code path with training), applied to at least one Tensor it records a node so
`backward` can run vector-Jacobian products along the tape.

This is not a general autodiff system. No higher-order derivatives, no
in-place mutation of recorded values, no views into tensors. Correctness is
enforced externally by `grad_check` (central finite differences) instead of
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import NumericDomainError, ShapeError

Array = np.ndarray


class Tensor:
    """A node in the backward tape: a value plus how to push gradients back."""

    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self._parents: tuple[Tensor, ...] = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def backward(self) -> None:
        """Accumulate gradients of this node w.r.t. every ancestor.

        Seeds with ones, so call it on a scalar loss. Gradients add up across
        multiple uses of the same node.
        """
        order = _topo(self)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad += g

    # operator sugar; scalars and ndarrays are lifted as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        if isinstance(other, Tensor) or not np.isscalar(other):
            raise ShapeError("Tensor division only supports scalar divisors")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return asum(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, tracked={self._vjp is not None})"


def _topo(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _is_tracked(*args) -> bool:
    return any(isinstance(a, Tensor) for a in args)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a_shape, b_shape):
    try:
        np.broadcast_shapes(a_shape, b_shape)
    except ValueError as exc:
        raise ShapeError(f"incompatible shapes {a_shape} and {b_shape}") from exc


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b):
    if not _is_tracked(a, b):
        return np.add(a, b)
    ta, tb = as_tensor(a), as_tensor(b)
    _check_broadcast(ta.value.shape, tb.value.shape)
    value = ta.value + tb.value

    def vjp(g):
        return (_unbroadcast(g, ta.value.shape), _unbroadcast(g, tb.value.shape))

    return Tensor(value, (ta, tb), vjp)


def mul(a, b):
    if not _is_tracked(a, b):
        return np.multiply(a, b)
    ta, tb = as_tensor(a), as_tensor(b)
    _check_broadcast(ta.value.shape, tb.value.shape)
    value = ta.value * tb.value

    def vjp(g):
        return (
            _unbroadcast(g * tb.value, ta.value.shape),
            _unbroadcast(g * ta.value, tb.value.shape),
        )

    return Tensor(value, (ta, tb), vjp)


def matmul(a, b):
    a_val = a.value if isinstance(a, Tensor) else np.asarray(a)
    b_val = b.value if isinstance(b, Tensor) else np.asarray(b)
    if a_val.ndim != 2 or b_val.ndim != 2 or a_val.shape[1] != b_val.shape[0]:
        raise ShapeError(f"matmul needs (m,k)@(k,n), got {a_val.shape} @ {b_val.shape}")
    if not _is_tracked(a, b):
        return a_val @ b_val
    ta, tb = as_tensor(a), as_tensor(b)
    value = ta.value @ tb.value

    def vjp(g):
        return (g @ tb.value.T, ta.value.T @ g)

    return Tensor(value, (ta, tb), vjp)


def tanh(x):
    if not _is_tracked(x):
        return np.tanh(x)
    tx = as_tensor(x)
    value = np.tanh(tx.value)

    def vjp(g):
        return (g * (1.0 - value * value),)

    return Tensor(value, (tx,), vjp)


def sigmoid(x):
    if not _is_tracked(x):
        return _sigmoid_values(np.asarray(x, dtype=np.float64))
    tx = as_tensor(x)
    value = _sigmoid_values(tx.value)

    def vjp(g):
        return (g * value * (1.0 - value),)

    return Tensor(value, (tx,), vjp)


def _sigmoid_values(x: Array) -> Array:
    # two-branch form stays finite for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def exp(x):
    if not _is_tracked(x):
        return np.exp(x)
    tx = as_tensor(x)
    value = np.exp(tx.value)

    def vjp(g):
        return (g * value,)

    return Tensor(value, (tx,), vjp)


def log(x):
    x_val = x.value if isinstance(x, Tensor) else np.asarray(x)
    if np.any(x_val <= 0):
        raise NumericDomainError("log requires strictly positive inputs")
    if not _is_tracked(x):
        return np.log(x_val)
    tx = as_tensor(x)
    value = np.log(tx.value)

    def vjp(g):
        return (g / tx.value,)

    return Tensor(value, (tx,), vjp)


def relu(x):
    if not _is_tracked(x):
        return np.maximum(x, 0.0)
    tx = as_tensor(x)
    value = np.maximum(tx.value, 0.0)

    def vjp(g):
        return (g * (tx.value > 0.0),)

    return Tensor(value, (tx,), vjp)


# ---------------------------------------------------------------------------
# reductions and indexing


def asum(x, axis=None, keepdims=False):
    """Sum over an axis (or everything). Named to avoid shadowing built-in sum."""
    if not _is_tracked(x):
        return np.sum(x, axis=axis, keepdims=keepdims)
    tx = as_tensor(x)
    value = np.sum(tx.value, axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, tx.value.shape).copy(),)

    return Tensor(value, (tx,), vjp)


def logsumexp(x, axis=-1):
    """log(sum(exp(x))) along `axis`, keepdims, max-shifted so it is exact
    under translation."""
    if not _is_tracked(x):
        xv = np.asarray(x, dtype=np.float64)
        m = np.max(xv, axis=axis, keepdims=True)
        return m + np.log(np.sum(np.exp(xv - m), axis=axis, keepdims=True))
    tx = as_tensor(x)
    m = np.max(tx.value, axis=axis, keepdims=True)
    value = m + np.log(np.sum(np.exp(tx.value - m), axis=axis, keepdims=True))
    soft = np.exp(tx.value - value)

    def vjp(g):
        return (g * soft,)

    return Tensor(value, (tx,), vjp)


def slice_cols(x, lo: int, hi: int):
    if not _is_tracked(x):
        return np.asarray(x)[:, lo:hi]
    tx = as_tensor(x)
    value = tx.value[:, lo:hi]

    def vjp(g):
        out = np.zeros_like(tx.value)
        out[:, lo:hi] = g
        return (out,)

    return Tensor(value, (tx,), vjp)


def gather_rows(x, idx):
    idx = np.asarray(idx)
    if not _is_tracked(x):
        return np.asarray(x)[idx]
    tx = as_tensor(x)
    value = tx.value[idx]

    def vjp(g):
        out = np.zeros_like(tx.value)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(value, (tx,), vjp)


def gather2d(x, rows, cols):
    """x[rows[j], cols[j]] for each j; scatter-add on the way back."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if rows.shape != cols.shape:
        raise ShapeError(f"gather2d index shapes differ: {rows.shape} vs {cols.shape}")
    if not _is_tracked(x):
        return np.asarray(x)[rows, cols]
    tx = as_tensor(x)
    value = tx.value[rows, cols]

    def vjp(g):
        out = np.zeros_like(tx.value)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return Tensor(value, (tx,), vjp)


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    """Worst-case agreement between backward() and central differences."""

    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, ...]
    per_param: dict[str, float]

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def grad_check(
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Array],
    eps: float = 1e-5,
    scale_floor: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of `fn` against central finite differences.

    `fn` receives fresh leaf Tensors built from `params` on every call and
    must be deterministic (freeze any sampling in a closure). Relative error
    per coordinate is |a - n| / max(|a|, |n|, scale_floor); the floor keeps
    finite-difference round-off from dominating near-zero entries.
    """
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def eval_loss() -> float:
        leaves = {k: Tensor(v) for k, v in work.items()}
        out = fn(leaves)
        val = float(out.value) if isinstance(out, Tensor) else float(out)
        if not np.isfinite(val):
            raise NumericDomainError("loss is non-finite during grad_check")
        return val

    leaves = {k: Tensor(v) for k, v in work.items()}
    loss = fn(leaves)
    if not isinstance(loss, Tensor) or loss.value.shape != ():
        raise ShapeError("grad_check expects fn to return a scalar Tensor")
    if not np.isfinite(loss.value):
        raise NumericDomainError("loss is non-finite during grad_check")
    loss.backward()
    analytic = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.value))
        for k, t in leaves.items()
    }

    max_rel = 0.0
    worst_param = ""
    worst_index: tuple[int, ...] = ()
    per_param: dict[str, float] = {}
    for name, arr in work.items():
        worst_here = 0.0
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            ix = it.multi_index
            orig = arr[ix]
            arr[ix] = orig + eps
            f_plus = eval_loss()
            arr[ix] = orig - eps
            f_minus = eval_loss()
            arr[ix] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[name][ix])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), scale_floor)
            if rel > worst_here:
                worst_here = rel
            if rel > max_rel:
                max_rel, worst_param, worst_index = rel, name, ix
            it.iternext()
        per_param[name] = worst_here
    return GradCheckReport(max_rel, worst_param, worst_index, per_param)
