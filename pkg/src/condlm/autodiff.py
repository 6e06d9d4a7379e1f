"""Reverse-mode automatic differentiation over numpy arrays.

A small tape-free engine: every op returns a ``Tensor`` holding the forward
value plus a closure that routes the output gradient into the operands'
``grad`` buffers. Gradients accumulate additively, so repeated ``backward``
calls without ``zero_grad`` sum their contributions.

Two precisions are supported and chosen by the arrays you put in:
float64 ("wide") for oracles and gradient checks, float32 ("narrow") for
training throughput. Ops never change dtype on their own.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

WIDE = np.float64
NARROW = np.float32
DTYPES = {"wide": WIDE, "narrow": NARROW}


class Tensor:
    """A node in the computation graph: value, gradient, backward closure."""

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward_fn=None):
        self.data = np.asarray(data)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    """A trainable leaf: gradients accumulate here."""
    return Tensor(np.asarray(data), requires_grad=True)


def constant(data) -> Tensor:
    """A non-trainable leaf: no gradient is kept."""
    return Tensor(np.asarray(data), requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _node(data, parents: Sequence[Tensor], backward_fn) -> Tensor:
    # Graph edges are only kept when some ancestor actually needs a gradient.
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents),
                      backward_fn=backward_fn)
    return Tensor(data)


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Undo numpy broadcasting: sum gradient down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a.accumulate(_sum_to_shape(g @ b.data.swapaxes(-1, -2), a.data.shape))
        if b.requires_grad:
            b.accumulate(_sum_to_shape(a.data.swapaxes(-1, -2) @ g, b.data.shape))

    return _node(out_data, (a, b), bw)


def add(a, b) -> Tensor:
    """Elementwise sum with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError:
        raise ValueError(f"add shape mismatch: {a.data.shape} + {b.data.shape}") from None

    def bw(g):
        if a.requires_grad:
            a.accumulate(_sum_to_shape(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_sum_to_shape(g, b.data.shape))

    return _node(out_data, (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul shape mismatch: {a.data.shape} * {b.data.shape}") from None

    def bw(g):
        if a.requires_grad:
            a.accumulate(_sum_to_shape(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_sum_to_shape(g * a.data, b.data.shape))

    return _node(out_data, (a, b), bw)


def scale(a, s: float) -> Tensor:
    """Multiply by a python scalar."""
    a = _as_tensor(a)
    s = float(s)
    out_data = a.data * s

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * s)

    return _node(out_data, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    return _node(out_data, (a,), bw)


def swap_last2(a) -> Tensor:
    """Transpose the last two axes (for attention key transposes)."""
    a = _as_tensor(a)
    out_data = a.data.swapaxes(-1, -2)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g.swapaxes(-1, -2))

    return _node(out_data, (a,), bw)


def concat_lastdim(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis (head merge)."""
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat_lastdim needs at least one part")
    lead = parts[0].data.shape[:-1]
    for p in parts:
        if p.data.shape[:-1] != lead:
            raise ValueError(f"concat_lastdim leading-shape mismatch: {p.data.shape} vs {parts[0].data.shape}")
    out_data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def bw(g):
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.accumulate(g[..., offset:offset + w])
            offset += w

    return _node(out_data, tuple(parts), bw)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0)

    def bw(g):
        if a.requires_grad:
            a.accumulate(g * (a.data > 0))

    return _node(out_data, (a,), bw)


def dropout(a, p: float, rng: np.random.Generator | None = None,
            training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability p, rescale by 1/(1-p).

    Identity in evaluation mode or at p == 0 (the input node is returned
    unchanged). A generator is required whenever the mask is actually drawn.
    """
    a = _as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return mul(a, constant(keep))


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by an integer id array."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValueError(f"embedding ids must be integers, got dtype {ids.dtype}")
    n = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise ValueError(f"embedding id {bad} out of range for table of {n} rows")
    out_data = table.data[ids]

    def bw(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, ids, g)

    return _node(out_data, (table,), bw)


def softmax_lastdim(a) -> Tensor:
    """Numerically stable softmax over the last axis.

    -inf entries are the masking convention and give weight exactly zero.
    NaN or +inf inputs, and fully masked rows, are errors.
    """
    a = _as_tensor(a)
    x = a.data
    if np.isnan(x).any() or np.isposinf(x).any():
        raise ValueError("softmax input contains NaN or +inf")
    m = np.max(x, axis=-1, keepdims=True)
    if np.isneginf(m).any():
        raise ValueError("softmax over a fully masked row")
    e = np.exp(x - m)
    s = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=-1, keepdims=True)
            a.accumulate(s * (g - inner))

    return _node(s, (a,), bw)


def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis (biased variance), then affine."""
    x = _as_tensor(x)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ValueError(f"layer_norm affine shapes {gain.data.shape}/{bias.data.shape} do not match width {d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = gain.data * xhat + bias.data

    def bw(g):
        if gain.requires_grad:
            gain.accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            x.accumulate(inv * (gx - m1 - xhat * m2))

    return _node(out_data, (x, gain, bias), bw)


def cross_entropy_logits(logits: Tensor, labels) -> Tensor:
    """Per-position -log softmax(logits)[label]; labels is an int array."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    v = logits.data.shape[-1]
    if labels.shape != logits.data.shape[:-1]:
        raise ValueError(f"labels shape {labels.shape} does not match logits {logits.data.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= v):
        bad = int(labels.min()) if labels.min() < 0 else int(labels.max())
        raise ValueError(f"label {bad} out of range for {v} classes")
    x = logits.data
    m = np.max(x, axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(x, labels[..., None], axis=-1)
    out_data = (lse - picked)[..., 0]

    def bw(g):
        if logits.requires_grad:
            p = np.exp(x - lse)
            onehot = np.zeros_like(x)
            np.put_along_axis(onehot, labels[..., None], 1.0, axis=-1)
            logits.accumulate((p - onehot) * g[..., None])

    return _node(out_data, (logits,), bw)


def tensor_sum(a) -> Tensor:
    """Sum all entries down to a scalar."""
    a = _as_tensor(a)
    out_data = np.asarray(a.data.sum(), dtype=a.data.dtype)

    def bw(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g, a.data.shape).astype(a.data.dtype))

    return _node(out_data, (a,), bw)


def masked_mean(x, mask: np.ndarray) -> Tensor:
    """Mean of x over entries where mask == 1."""
    mask = np.asarray(mask)
    total = float(mask.sum())
    if total <= 0:
        raise ValueError("masked_mean over an empty mask")
    return scale(tensor_sum(mul(x, constant(mask.astype(_as_tensor(x).data.dtype)))), 1.0 / total)


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through the graph."""
    if loss.data.shape != ():
        raise ValueError(f"backward needs a scalar, got shape {loss.data.shape}")
    # Iterative DFS topological order; avoids recursion limits on deep graphs.
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.accumulate(np.ones((), dtype=loss.data.dtype))
    for node in reversed(topo):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


@dataclass
class FiniteDiffResult:
    """Outcome of a central-difference gradient check."""
    max_rel_error: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float
    coords_checked: int


def finite_diff_check(f: Callable[[], Tensor],
                      params: Mapping[str, Tensor],
                      step: float = 1e-5,
                      max_coords: int | None = None,
                      rng: np.random.Generator | None = None,
                      rel_floor: float = 1e-5) -> FiniteDiffResult:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must rebuild the graph on each call, reading the parameters'
    current data, and must be deterministic (dropout off, fixed masks).
    The relative error divides by max(|analytic|, |numeric|, rel_floor):
    below the floor, finite differences cannot resolve a relative error and
    the comparison degrades to an absolute one at that scale. Wide (float64)
    parameters are required; float32 noise swamps the difference quotient.
    """
    items = list(params.items())
    for name, t in items:
        if t.data.dtype != WIDE:
            raise ValueError(f"finite_diff_check needs float64 params, {name} is {t.data.dtype}")
    zero_grad(t for _, t in items)
    backward(f())
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in items}

    coords = [(name, idx) for name, t in items for idx in np.ndindex(t.data.shape)]
    if max_coords is not None and max_coords < len(coords):
        if rng is None:
            raise ValueError("sampling coordinates needs an rng")
        chosen = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in chosen]

    by_name = dict(items)
    worst = FiniteDiffResult(0.0, "", (), 0.0, 0.0, len(coords))
    for name, idx in coords:
        t = by_name[name]
        orig = t.data[idx]
        t.data[idx] = orig + step
        fp = float(f().data)
        t.data[idx] = orig - step
        fm = float(f().data)
        t.data[idx] = orig
        numeric = (fp - fm) / (2.0 * step)
        a = float(analytic[name][idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
        if rel > worst.max_rel_error:
            worst = FiniteDiffResult(rel, name, idx, a, numeric, len(coords))
    return worst
