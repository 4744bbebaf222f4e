"""Minimal reverse-mode differentiation over numpy arrays.

Provides exactly the operations the network needs: elementwise arithmetic
with broadcasting, matmul, 2D/3D convolution, normalization building blocks,
activations, softmax, resizing, and trilinear volume resampling.  Every
forward op records its parents and a vector-Jacobian closure; ``backward``
walks the recorded graph once in reverse topological order, so gradient
accumulation order is deterministic.
"""

from __future__ import annotations

import numpy as np

from .volume import resample_arrays, resample_volume_grad_arrays


class Node:
    """One recorded value in the computation graph."""

    __slots__ = ("value", "parents", "vjp", "grad")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def backward(root: Node, seed=None) -> None:
    """Accumulate gradients of ``root`` into every reachable node."""
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value) if seed is None else np.asarray(seed, dtype=np.float64)
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value + b.value
    return Node(out, (a, b), lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)))


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value - b.value
    return Node(out, (a, b), lambda g: (_unbroadcast(g, a.value.shape), _unbroadcast(-g, b.value.shape)))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value * b.value
    return Node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.value.shape), _unbroadcast(g * a.value, b.value.shape)),
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value / b.value
    return Node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.value.shape),
            _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape),
        ),
    )


def nsum(a: Node, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        gg = g
        if axis is not None and not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.value.shape).copy(),)

    return Node(out, (a,), vjp)


def nmean(a: Node, axis=None, keepdims: bool = False) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else np.prod([a.value.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(nsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def nabs(a: Node) -> Node:
    a = as_node(a)
    return Node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def nlog(a: Node) -> Node:
    a = as_node(a)
    return Node(np.log(a.value), (a,), lambda g: (g / a.value,))


def nsqrt(a: Node) -> Node:
    a = as_node(a)
    out = np.sqrt(a.value)
    return Node(out, (a,), lambda g: (g * 0.5 / out,))


def clip(a: Node, lo: float, hi: float) -> Node:
    """Clamp; gradient is zero where the clamp is active."""
    a = as_node(a)
    inside = ((a.value > lo) & (a.value < hi)).astype(np.float64)
    return Node(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def sigmoid(a: Node) -> Node:
    a = as_node(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return Node(out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a: Node, slope: float = 0.01) -> Node:
    a = as_node(a)
    mask = np.where(a.value > 0, 1.0, slope)
    return Node(a.value * mask, (a,), lambda g: (g * mask,))


def softmax(a: Node, axis: int) -> Node:
    a = as_node(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return Node(s, (a,), vjp)


def reshape(a: Node, shape) -> Node:
    a = as_node(a)
    old = a.value.shape
    return Node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Node, axes) -> Node:
    a = as_node(a)
    inverse = np.argsort(axes)
    return Node(a.value.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def flip(a: Node, axis: int) -> Node:
    a = as_node(a)
    return Node(np.flip(a.value, axis).copy(), (a,), lambda g: (np.flip(g, axis).copy(),))


def channel_slice(a: Node, start: int, stop: int) -> Node:
    a = as_node(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[..., start:stop] = g
        return (out,)

    return Node(a.value[..., start:stop], (a,), vjp)


def matmul(a: Node, b: Node) -> Node:
    a, b = as_node(a), as_node(b)
    return Node(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def _pad2d(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((p, p), (p, p), (0, 0)))


def conv2d(x: Node, w: Node, b: Node, stride: int = 1, pad: int = 1) -> Node:
    """2D convolution on an (H, W, Cin) sample with a (kh, kw, Cin, Cout) kernel."""
    x, w, b = as_node(x), as_node(w), as_node(b)
    kh, kw, cin, cout = w.value.shape
    xp = _pad2d(x.value, pad)
    hp, wp = xp.shape[:2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((ho, wo, kh, kw, cin))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j, :] = xp[i : i + stride * ho : stride, j : j + stride * wo : stride, :]
    cols2 = cols.reshape(ho * wo, kh * kw * cin)
    wm = w.value.reshape(kh * kw * cin, cout)
    out = (cols2 @ wm + b.value).reshape(ho, wo, cout)

    def vjp(g):
        g2 = g.reshape(ho * wo, cout)
        gw = (cols2.T @ g2).reshape(w.value.shape)
        gb = g2.sum(axis=0)
        gcols = (g2 @ wm.T).reshape(ho, wo, kh, kw, cin)
        gxp = np.zeros((hp, wp, cin))
        for i in range(kh):
            for j in range(kw):
                gxp[i : i + stride * ho : stride, j : j + stride * wo : stride, :] += gcols[:, :, i, j, :]
        gx = gxp[pad : hp - pad, pad : wp - pad, :] if pad else gxp
        return (gx, gw, gb)

    return Node(out, (x, w, b), vjp)


def conv3d(x: Node, w: Node, b: Node, pad: int = 1) -> Node:
    """3D convolution on a (D, H, W, Cin) sample with a (kd, kh, kw, Cin, Cout) kernel."""
    x, w, b = as_node(x), as_node(w), as_node(b)
    kd, kh, kw, cin, cout = w.value.shape
    xp = np.pad(x.value, ((pad, pad), (pad, pad), (pad, pad), (0, 0))) if pad else x.value
    dp, hp, wp = xp.shape[:3]
    do, ho, wo = dp - kd + 1, hp - kh + 1, wp - kw + 1
    cols = np.empty((do, ho, wo, kd, kh, kw, cin))
    for a in range(kd):
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, a, i, j, :] = xp[a : a + do, i : i + ho, j : j + wo, :]
    cols2 = cols.reshape(do * ho * wo, kd * kh * kw * cin)
    wm = w.value.reshape(kd * kh * kw * cin, cout)
    out = (cols2 @ wm + b.value).reshape(do, ho, wo, cout)

    def vjp(g):
        g2 = g.reshape(do * ho * wo, cout)
        gw = (cols2.T @ g2).reshape(w.value.shape)
        gb = g2.sum(axis=0)
        gcols = (g2 @ wm.T).reshape(do, ho, wo, kd, kh, kw, cin)
        gxp = np.zeros((dp, hp, wp, cin))
        for a in range(kd):
            for i in range(kh):
                for j in range(kw):
                    gxp[a : a + do, i : i + ho, j : j + wo, :] += gcols[:, :, :, a, i, j, :]
        gx = gxp[pad : dp - pad, pad : hp - pad, pad : wp - pad, :] if pad else gxp
        return (gx, gw, gb)

    return Node(out, (x, w, b), vjp)


def upsample2x(x: Node) -> Node:
    """Nearest-neighbor 2x upsampling over the first two axes of (H, W, C)."""
    x = as_node(x)
    h, w, c = x.value.shape
    out = x.value.repeat(2, axis=0).repeat(2, axis=1)
    return Node(out, (x,), lambda g: (g.reshape(h, 2, w, 2, c).sum(axis=(1, 3)),))


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Align-corners linear interpolation matrix mapping n_in samples to n_out."""
    m = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        m[:, 0] = 1.0
        return m
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    t = pos - i0
    rows = np.arange(n_out)
    m[rows, i0] = 1.0 - t
    m[rows, i0 + 1] += t
    return m


def linear_resize2d(x: Node, out_h: int, out_w: int) -> Node:
    """Bilinear (align-corners) resize of an (H, W, C) plane."""
    x = as_node(x)
    h, w, _ = x.value.shape
    mh = resize_matrix(h, out_h)
    mw = resize_matrix(w, out_w)
    y1 = np.einsum("ah,hwc->awc", mh, x.value)
    out = np.einsum("bw,awc->abc", mw, y1)

    def vjp(g):
        g1 = np.einsum("bw,abc->awc", mw, g)
        return (np.einsum("ah,awc->hwc", mh, g1),)

    return Node(out, (x,), vjp)


def uniform_filter2d(x: Node, k: int) -> Node:
    """Valid-mode k x k box filter per channel of an (H, W, C) plane."""
    x = as_node(x)
    h, w, c = x.value.shape
    ho, wo = h - k + 1, w - k + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"window {k} larger than image {h}x{w}")
    scale = 1.0 / (k * k)
    out = np.zeros((ho, wo, c))
    for i in range(k):
        for j in range(k):
            out += x.value[i : i + ho, j : j + wo, :]
    out *= scale

    def vjp(g):
        gx = np.zeros((h, w, c))
        gs = g * scale
        for i in range(k):
            for j in range(k):
                gx[i : i + ho, j : j + wo, :] += gs
        return (gx,)

    return Node(out, (x,), vjp)


def volume_resample(x: Node, coords: np.ndarray) -> Node:
    """Trilinear resample of a (D, H, W, C) node by a constant flow."""
    x = as_node(x)
    out = resample_arrays(x.value, coords)
    dims = x.value.shape[:3]
    return Node(out, (x,), lambda g: (resample_volume_grad_arrays(dims, coords, g),))


def mean_of(nodes: list[Node]) -> Node:
    """Elementwise mean of same-shaped nodes, summed in list order."""
    total = nodes[0]
    for n in nodes[1:]:
        total = add(total, n)
    return mul(total, 1.0 / len(nodes))
