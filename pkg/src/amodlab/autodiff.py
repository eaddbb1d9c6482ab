"""Reverse-mode automatic differentiation over numpy arrays.

A deliberately small operator set: exactly what the dispatch networks need
(affine maps, ReLU, softmax-style reductions, elementwise minimum, masked
attention pooling). Tensors wrap float64 numpy arrays and record a backward
closure; ``backward()`` walks the graph in reverse topological order.

Gradient computation can be disabled wholesale with the ``no_grad`` context
manager, which makes forward passes allocate no graph nodes.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the context."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A numpy array with an optional gradient slot and a backward closure."""

    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward")

    # make numpy defer to the reflected operators instead of elementwise
    # iterating over Tensor objects
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basics ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    def item(self) -> float:
        return float(self.values)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph."""
        if self.values.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.values))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if type(x) is Tensor else Tensor(x)


def _make(values: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(values)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# -- arithmetic -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    values = a.values + b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(values, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    values = a.values - b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(values, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    values = a.values * b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.shape))

    return _make(values, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    values = a.values / b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.values, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.values / (b.values**2), b.shape))

    return _make(values, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)
    values = a.values**exponent

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * exponent * a.values ** (exponent - 1.0))

    return _make(values, (a,), backward)


def matmul(a, b) -> Tensor:
    """Matrix product ``a @ b`` with `b` two-dimensional.

    `a` may carry leading batch dimensions: (..., m, k) @ (k, n).
    """
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    values = a.values @ b.values

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.values.T)
        if b.requires_grad:
            k = a.shape[-1]
            n = g.shape[-1]
            b._accumulate(a.values.reshape(-1, k).T @ g.reshape(-1, n))

    return _make(values, (a, b), backward)


# -- reductions and nonlinearities -----------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    values = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            g_exp = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g_exp, a.shape).copy())

    return _make(values, (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.values.size
    else:
        count = a.shape[axis]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.values > 0
    values = np.where(mask, a.values, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(values, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    values = np.exp(a.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * values)

    return _make(values, (a,), backward)


def log(a) -> Tensor:
    a = as_tensor(a)
    values = np.log(a.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.values)

    return _make(values, (a,), backward)


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties route the gradient to the first operand."""
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.values <= b.values
    values = np.where(take_a, a.values, b.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * take_a, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * ~take_a, b.shape))

    return _make(values, (a, b), backward)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    values = np.concatenate([t.values for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make(values, tuple(ts), backward)


def gather_last(a, index: np.ndarray) -> Tensor:
    """Pick one entry per row along the last axis: (N, k) with (N,) -> (N,)."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    rows = np.arange(a.shape[0])
    values = a.values[rows, idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            np.add.at(full, (rows, idx), g)
            a._accumulate(full)

    return _make(values, (a,), backward)


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    values = a.values.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return _make(values, (a,), backward)


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    new_shape = list(a.shape)
    new_shape.insert(axis if axis >= 0 else len(new_shape) + 1 + axis, 1)
    return reshape(a, tuple(new_shape))


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max shift is treated as a constant."""
    a = as_tensor(a)
    shift = a.values.max(axis=axis, keepdims=True)
    e = exp(sub(a, shift))
    return div(e, tsum(e, axis=axis, keepdims=True))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shift = a.values.max(axis=axis, keepdims=True)
    shifted = sub(a, shift)
    lse = log(tsum(exp(shifted), axis=axis, keepdims=True))
    return sub(shifted, lse)


def masked_softmax(scores, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax over `axis` restricted to positions where `mask` is true.

    Rows with no valid position come out uniform; callers are expected to
    replace them (see the empty-set constant in the set encoders).
    """
    scores = as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    neg = np.where(mask, 0.0, -1e30)
    return softmax(add(scores, neg), axis=axis)


# -- fused network ops ---------------------------------------------------------
#
# The networks are evaluated many times per training step on small arrays,
# where per-node overhead dominates. These ops fuse one network stage each;
# their backward passes are exercised by the same finite-difference checks
# as the primitive ops. The twin_* variants carry a leading twin axis on
# every parameter, evaluating both members of a twin-critic pair in one
# batched pass.


def affine(x, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ weight + bias, with x carrying optional leading batch dims."""
    x = as_tensor(x)
    values = x.values @ weight.values + bias.values

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.values.T)
        k, n = weight.shape
        if weight.requires_grad:
            weight._accumulate(x.values.reshape(-1, k).T @ g.reshape(-1, n))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, n).sum(axis=0))

    return _make(values, (x, weight, bias), backward)


def dense_relu(x, weight: Tensor, bias: Tensor) -> Tensor:
    """relu(x @ weight + bias) as a single graph node."""
    x = as_tensor(x)
    pre = x.values @ weight.values + bias.values
    active = pre > 0
    values = np.where(active, pre, 0.0)

    def backward(g):
        gpre = g * active
        if x.requires_grad:
            x._accumulate(gpre @ weight.values.T)
        k, n = weight.shape
        if weight.requires_grad:
            weight._accumulate(x.values.reshape(-1, k).T @ gpre.reshape(-1, n))
        if bias.requires_grad:
            bias._accumulate(gpre.reshape(-1, n).sum(axis=0))

    return _make(values, (x, weight, bias), backward)


def attention_pool(
    xs: np.ndarray,
    mask: np.ndarray,
    query: Tensor,
    w_embed: Tensor,
    b_embed: Tensor,
    w_key: Tensor,
    b_key: Tensor,
    w_value: Tensor,
    b_value: Tensor,
    empty: Tensor,
) -> Tensor:
    """Single-head dot-product attention over a masked entity set.

    `xs` (N, M, d_in) and `mask` (N, M) are constants (observation data);
    the query and all projection parameters participate in the graph.
    Fully masked rows return the learned `empty` constant.
    """
    mask = np.asarray(mask, dtype=bool)
    pre = xs @ w_embed.values
    pre += b_embed.values  # (N, M, D)
    e = np.maximum(pre, 0.0)
    keys = e @ w_key.values
    keys += b_key.values
    vals = e @ w_value.values
    vals += b_value.values
    d = keys.shape[-1]
    scale = 1.0 / np.sqrt(d)
    scores = (keys @ query.values[:, :, None])[:, :, 0]  # (N, M)
    scores *= scale
    scores[~mask] = -np.inf
    shift = scores.max(axis=-1, keepdims=True)
    np.copyto(shift, 0.0, where=~np.isfinite(shift))
    expd = np.exp(scores - shift)  # exp(-inf) = 0 at masked slots
    denom = expd.sum(axis=-1, keepdims=True)
    np.copyto(denom, 1.0, where=denom == 0.0)
    attn = expd / denom
    pooled = (attn[:, None, :] @ vals)[:, 0, :]  # (N, D)
    has = mask.any(axis=1, keepdims=True)
    values = np.where(has, pooled, empty.values)

    def backward(g):
        g_pooled = np.where(has, g, 0.0)
        if empty.requires_grad:
            empty._accumulate(np.where(has, 0.0, g).sum(axis=0))
        g_attn = (vals @ g_pooled[:, :, None])[:, :, 0]  # (N, M)
        g_vals = attn[:, :, None] * g_pooled[:, None, :]  # (N, M, D)
        g_scores = attn * (g_attn - (attn * g_attn).sum(axis=-1, keepdims=True))
        g_scores *= scale
        g_keys = g_scores[:, :, None] * query.values[:, None, :]
        if query.requires_grad:
            query._accumulate((g_scores[:, None, :] @ keys)[:, 0, :])
        g_e = g_keys @ w_key.values.T
        g_e += g_vals @ w_value.values.T
        flat_e = e.reshape(-1, d)
        if w_key.requires_grad:
            w_key._accumulate(flat_e.T @ g_keys.reshape(-1, d))
            b_key._accumulate(g_keys.reshape(-1, d).sum(axis=0))
        if w_value.requires_grad:
            w_value._accumulate(flat_e.T @ g_vals.reshape(-1, d))
            b_value._accumulate(g_vals.reshape(-1, d).sum(axis=0))
        g_pre = g_e
        g_pre *= pre > 0
        if w_embed.requires_grad:
            d_in = xs.shape[-1]
            w_embed._accumulate(xs.reshape(-1, d_in).T @ g_pre.reshape(-1, d))
            b_embed._accumulate(g_pre.reshape(-1, d).sum(axis=0))

    return _make(
        values,
        (query, w_embed, b_embed, w_key, b_key, w_value, b_value, empty),
        backward,
    )


def twin_dense_relu(x, weight: Tensor, bias: Tensor, x_twin: bool = True) -> Tensor:
    """relu(x @ W_t + b_t) for both twins at once.

    `weight` is (t, k, n), `bias` (t, n). With `x_twin` the input already
    carries the twin axis, (t, ..., k); otherwise it is shared, (..., k).
    The result always carries the twin axis: (t, ..., n).
    """
    x = as_tensor(x)
    t, k, n = weight.shape
    xv = x.values
    shared_x = not x_twin
    if shared_x:
        xv = np.broadcast_to(xv, (t,) + xv.shape)
    brd_bias = bias.values.reshape((t,) + (1,) * (xv.ndim - 2) + (n,))
    pre = xv @ weight.values
    pre += brd_bias
    active = pre > 0
    values = np.where(active, pre, 0.0)

    def backward(g):
        gpre = g * active
        flat_g = gpre.reshape(t, -1, n)
        flat_x = xv.reshape(t, -1, k)
        if x.requires_grad:
            gx = gpre @ np.swapaxes(weight.values, -1, -2)
            x._accumulate(gx.sum(axis=0) if shared_x else gx)
        if weight.requires_grad:
            weight._accumulate(np.swapaxes(flat_x, -1, -2) @ flat_g)
            bias._accumulate(flat_g.sum(axis=1))

    return _make(values, (x, weight, bias), backward)


def twin_affine(x, weight: Tensor, bias: Tensor, x_twin: bool = True) -> Tensor:
    """x @ W_t + b_t for both twins; same conventions as twin_dense_relu."""
    x = as_tensor(x)
    t, k, n = weight.shape
    xv = x.values
    shared_x = not x_twin
    if shared_x:
        xv = np.broadcast_to(xv, (t,) + xv.shape)
    values = xv @ weight.values + bias.values.reshape((t,) + (1,) * (xv.ndim - 2) + (n,))

    def backward(g):
        flat_g = g.reshape(t, -1, n)
        flat_x = xv.reshape(t, -1, k)
        if x.requires_grad:
            gx = g @ np.swapaxes(weight.values, -1, -2)
            x._accumulate(gx.sum(axis=0) if shared_x else gx)
        if weight.requires_grad:
            weight._accumulate(np.swapaxes(flat_x, -1, -2) @ flat_g)
            bias._accumulate(flat_g.sum(axis=1))

    return _make(values, (x, weight, bias), backward)


def twin_attention_pool(
    xs: np.ndarray,
    mask: np.ndarray,
    query: Tensor,
    w_embed: Tensor,
    b_embed: Tensor,
    w_key: Tensor,
    b_key: Tensor,
    w_value: Tensor,
    b_value: Tensor,
    empty: Tensor,
) -> Tensor:
    """Twin-stacked attention pooling over a shared masked entity set.

    `xs` (N, M, d_in) and `mask` (N, M) are shared constants; `query` is
    (t, N, D), projection weights are (t, d_in, D) / (t, D, D), and
    `empty` is (t, D). Returns (t, N, D).
    """
    mask = np.asarray(mask, dtype=bool)
    t, _, d = w_key.shape
    pre = xs[None] @ w_embed.values[:, None]  # (t, N, M, D)
    pre += b_embed.values[:, None, None, :]
    e = np.maximum(pre, 0.0)
    keys = e @ w_key.values[:, None]
    keys += b_key.values[:, None, None, :]
    vals = e @ w_value.values[:, None]
    vals += b_value.values[:, None, None, :]
    scale = 1.0 / np.sqrt(d)
    scores = (keys @ query.values[:, :, :, None])[..., 0]  # (t, N, M)
    scores *= scale
    scores[:, ~mask] = -np.inf
    shift = scores.max(axis=-1, keepdims=True)
    np.copyto(shift, 0.0, where=~np.isfinite(shift))
    expd = np.exp(scores - shift)
    denom = expd.sum(axis=-1, keepdims=True)
    np.copyto(denom, 1.0, where=denom == 0.0)
    attn = expd / denom
    pooled = (attn[:, :, None, :] @ vals)[:, :, 0, :]  # (t, N, D)
    has = mask.any(axis=1)[None, :, None]  # (1, N, 1)
    values = np.where(has, pooled, empty.values[:, None, :])

    def backward(g):
        g_pooled = np.where(has, g, 0.0)
        if empty.requires_grad:
            empty._accumulate(np.where(has, 0.0, g).sum(axis=1))
        g_attn = (vals @ g_pooled[:, :, :, None])[..., 0]  # (t, N, M)
        g_vals = attn[..., None] * g_pooled[:, :, None, :]  # (t, N, M, D)
        g_scores = attn * (g_attn - (attn * g_attn).sum(axis=-1, keepdims=True))
        g_scores *= scale
        g_keys = g_scores[..., None] * query.values[:, :, None, :]
        if query.requires_grad:
            query._accumulate((g_scores[:, :, None, :] @ keys)[:, :, 0, :])
        g_e = g_keys @ np.swapaxes(w_key.values, -1, -2)[:, None]
        g_e += g_vals @ np.swapaxes(w_value.values, -1, -2)[:, None]
        flat_e = e.reshape(t, -1, d)
        if w_key.requires_grad:
            w_key._accumulate(np.swapaxes(flat_e, -1, -2) @ g_keys.reshape(t, -1, d))
            b_key._accumulate(g_keys.reshape(t, -1, d).sum(axis=1))
        if w_value.requires_grad:
            w_value._accumulate(np.swapaxes(flat_e, -1, -2) @ g_vals.reshape(t, -1, d))
            b_value._accumulate(g_vals.reshape(t, -1, d).sum(axis=1))
        g_pre = g_e
        g_pre *= pre > 0
        if w_embed.requires_grad:
            d_in = xs.shape[-1]
            flat_xs = np.broadcast_to(xs[None], (t,) + xs.shape).reshape(t, -1, d_in)
            w_embed._accumulate(np.swapaxes(flat_xs, -1, -2) @ g_pre.reshape(t, -1, d))
            b_embed._accumulate(g_pre.reshape(t, -1, d).sum(axis=1))

    return _make(
        values,
        (query, w_embed, b_embed, w_key, b_key, w_value, b_value, empty),
        backward,
    )


def twin_gather(a, index: np.ndarray) -> Tensor:
    """Per-row last-axis pick with a twin axis: (t, N, k) + (N,) -> (t, N)."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    rows = np.arange(a.shape[1])
    values = a.values[:, rows, idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.values)
            full[:, rows, idx] = g
            a._accumulate(full)

    return _make(values, (a,), backward)
