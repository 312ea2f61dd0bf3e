"""Reverse-mode autodiff over dense NCHW tensors.

A Tensor wraps a numpy array plus the tape edge that produced it (parent
tensors and a vector-Jacobian closure). Building ops grows the tape;
backward() walks it once in reverse topological order and can return the
gradient at any recorded node, including intermediate activations, not
only leaves. A tape lives for a single forward pass.

Public tensors are float32; float64 is accepted and preserved so the
finite-difference test oracles can run in double precision.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    InvalidLabelError,
    ShapeMismatchError,
    UnreachableNodeError,
)


class Tensor:
    """Immutable dense array value, optionally recorded on a tape."""

    __slots__ = ("data", "_parents", "_vjp")

    def __init__(self, data, _parents=(), _vjp=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


@dataclass(frozen=True)
class GradRequest:
    """A scalar target node and the nodes whose gradients are wanted."""

    target: Tensor
    wrt: tuple


def _toposort(target):
    order = []
    seen = set()
    stack = [(target, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order, seen


def backward(target, wrt):
    """Return {node: Tensor gradient of target w.r.t. node} for each node in wrt.

    target must be scalar and produced by taped ops; every requested node
    must lie on the tape reaching target.
    """
    if target.size != 1:
        raise ValueError(f"backward target must be scalar, got shape {target.shape}")
    order, reachable = _toposort(target)
    for w in wrt:
        if id(w) not in reachable:
            raise UnreachableNodeError(
                f"node of shape {w.shape} is not reachable from the backward target"
            )
    grads = {id(target): np.ones_like(target.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return {w: Tensor(grads.get(id(w), np.zeros_like(w.data))) for w in wrt}


def grad(request):
    return backward(request.target, request.wrt)


def l1_normalize(t):
    """Divide by the L1 norm; inputs with ||t||_1 < 1e-12 map to zeros."""
    if isinstance(t, Tensor):
        return Tensor(l1_normalize(t.data))
    norm = np.abs(t).sum()
    if norm < 1e-12:
        return np.zeros_like(t)
    return (t / norm).astype(t.dtype, copy=False)


# ---------------------------------------------------------------------------
# taped ops


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, (a, b), vjp)


def mul(a, b):
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeMismatchError("elementwise multiply", a.shape, b.shape) from None

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out, (a, b), vjp)


def scale(a, c):
    c = a.data.dtype.type(c)
    return Tensor(a.data * c, (a,), lambda g: (g * c,))


def tsum(a):
    out = np.asarray(a.data.sum(), dtype=a.dtype)
    return Tensor(out, (a,), lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),))


def relu(a):
    mask = a.data > 0
    return Tensor(a.data * mask, (a,), lambda g: (g * mask,))


def flatten(a):
    n = a.shape[0]
    out = a.data.reshape(n, -1)
    return Tensor(out, (a,), lambda g: (g.reshape(a.shape),))


def dense(x, w, b):
    if x.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeMismatchError("dense input vs weight", x.shape, w.shape)
    if b.shape != (w.shape[1],):
        raise ShapeMismatchError("dense weight vs bias", w.shape, b.shape)
    out = x.data @ w.data + b.data

    def vjp(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return Tensor(out, (x, w, b), vjp)


def _same_padding(h, w, kh, kw, stride):
    ph = max((-(-h // stride) - 1) * stride + kh - h, 0)
    pw = max((-(-w // stride) - 1) * stride + kw - w, 0)
    return ph // 2, ph - ph // 2, pw // 2, pw - pw // 2


def conv2d(x, k, bias=None, stride=1, padding="same"):
    """Batched cross-correlation, NCHW x (O,C,kh,kw) -> NOHW."""
    if x.data.ndim != 4 or k.data.ndim != 4 or x.shape[1] != k.shape[1]:
        raise ShapeMismatchError("conv2d input vs kernel", x.shape, k.shape)
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    if padding == "same":
        pt, pb, pl, pr = _same_padding(h, w, kh, kw, stride)
    elif padding == "valid":
        pt = pb = pl = pr = 0
    else:
        pt = pb = pl = pr = int(padding)
    kd = k.data.astype(x.dtype, copy=False)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if xp.shape[2] < kh or xp.shape[3] < kw:
        raise ShapeMismatchError("conv2d padded input vs kernel", xp.shape, k.shape)
    out = kernels.conv2d_forward(xp, kd, stride)
    parents = (x, k)
    if bias is not None:
        if bias.shape != (o,):
            raise ShapeMismatchError("conv2d kernel vs bias", k.shape, bias.shape)
        out = out + bias.data.reshape(1, o, 1, 1).astype(x.dtype, copy=False)
        parents = (x, k, bias)

    def vjp(g):
        g = np.ascontiguousarray(g)
        gxp, gk = kernels.conv2d_backward(xp, kd, g, stride)
        gx = gxp[:, :, pt : pt + h, pl : pl + w]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(0, 2, 3))

    return Tensor(out, parents, vjp)


def maxpool2d(x, window=2, stride=None):
    if stride is None:
        stride = window
    if x.data.ndim != 4:
        raise ShapeMismatchError("maxpool2d input", x.shape, (..., "NCHW"))
    n, c, h, w = x.shape
    out, idx = kernels.maxpool_forward(x.data, window, stride)

    def vjp(g):
        return (kernels.maxpool_backward(np.ascontiguousarray(g), idx, h, w),)

    return Tensor(out, (x,), vjp)


def avgpool2d(x, window=2):
    """Non-overlapping mean pooling; spatial dims must divide by the window."""
    if x.data.ndim != 4:
        raise ShapeMismatchError("avgpool2d input", x.shape, (..., "NCHW"))
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeMismatchError("avgpool2d window", (h, w), (window, window))
    ho, wo = h // window, w // window
    out = x.data.reshape(n, c, ho, window, wo, window).mean(axis=(3, 5))

    def vjp(g):
        gx = np.broadcast_to(
            (g / (window * window))[:, :, :, None, :, None],
            (n, c, ho, window, wo, window))
        return (gx.reshape(n, c, h, w).astype(x.data.dtype),)

    return Tensor(out, (x,), vjp)


def softmax_cross_entropy(logits, labels, reduction="mean"):
    """Cross-entropy over batched logits (N, K); returns a scalar."""
    if logits.data.ndim != 2:
        raise ShapeMismatchError("softmax_cross_entropy logits", logits.shape, ("N", "K"))
    n, k = logits.shape
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (n,):
        raise ShapeMismatchError("logits vs labels", logits.shape, labels.shape)
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidLabelError(f"labels must lie in [0, {k}), got range "
                                f"[{labels.min()}, {labels.max()}]")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    lse = np.log(sez) + zmax
    per = lse[:, 0] - z[np.arange(n), labels]
    total = per.sum()
    if reduction == "mean":
        total = total / n
    elif reduction != "sum":
        raise ValueError(f"unknown reduction {reduction!r}")
    out = np.asarray(total, dtype=z.dtype)

    def vjp(g):
        p = ez / sez
        p[np.arange(n), labels] -= 1.0
        s = g if reduction == "sum" else g / n
        return (p * s,)

    return Tensor(out, (logits,), vjp)


def nearest_resize_pad(x, new_h, new_w, top, left):
    """Nearest-neighbour shrink to (new_h, new_w), zero-padded back to the
    original spatial size with the small image placed at (top, left).
    Differentiable; used by the input-diversity transform."""
    n, c, h, w = x.shape
    if not (0 < new_h <= h and 0 < new_w <= w):
        raise ValueError(f"resize target ({new_h}, {new_w}) exceeds input ({h}, {w})")
    if top + new_h > h or left + new_w > w:
        raise ValueError("pad offsets place the resized image out of bounds")
    ri = np.minimum((np.floor((np.arange(new_h) + 0.5) * h / new_h)).astype(np.int64), h - 1)
    ci = np.minimum((np.floor((np.arange(new_w) + 0.5) * w / new_w)).astype(np.int64), w - 1)
    small = x.data[:, :, ri[:, None], ci[None, :]]
    out = np.zeros_like(x.data)
    out[:, :, top : top + new_h, left : left + new_w] = small

    lin = (ri[:, None] * w + ci[None, :]).reshape(-1)

    def vjp(g):
        gs = g[:, :, top : top + new_h, left : left + new_w].reshape(n * c, -1)
        gx = np.zeros((n * c, h * w), dtype=g.dtype)
        np.add.at(gx, (np.arange(n * c)[:, None], lin[None, :]), gs)
        return (gx.reshape(x.shape),)

    return Tensor(out, (x,), vjp)
