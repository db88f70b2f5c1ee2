"""Reverse-mode autodiff over float64 numpy arrays.

Tape-style engine in the micrograd tradition: every op returns a new
``Tensor`` whose backward closure scatters the output gradient into its
parents. Only the operations the classifier forward pass and the attack
losses need are implemented; everything is float64 end to end so repeated
evaluation is bit-identical.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "backward",
    "add",
    "sub",
    "scale",
    "linear",
    "relu",
    "reshape",
    "conv2d",
    "global_mean_pool",
    "sum_all",
    "sqnorm",
    "gather",
    "vec_max",
    "vec_min",
    "l1_norm",
    "l2_norm",
    "linf_norm",
    "softmax_kl",
    "cross_entropy_mean",
]


class Tensor:
    """Float64 array plus an optional gradient buffer.

    Gradients accumulate additively, so a node feeding several consumers
    receives the sum of their contributions.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, c):
        return scale(self, c)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(output: Tensor, grad=1.0) -> None:
    """Run reverse accumulation from ``output``.

    Fills ``.grad`` on every reachable tensor with ``requires_grad`` set.
    ``grad`` seeds the output gradient and must broadcast to its shape.
    """
    if not output.requires_grad:
        return
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    seed = np.broadcast_to(np.asarray(grad, dtype=np.float64), output.data.shape)
    output.accumulate(seed)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g if a.data.shape == g.shape else np.sum(g))
        if b.requires_grad:
            b.accumulate(g if b.data.shape == g.shape else np.sum(g))

    return _node(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g if a.data.shape == g.shape else np.sum(g))
        if b.requires_grad:
            b.accumulate(-g if b.data.shape == g.shape else -np.sum(g))

    return _node(a.data - b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(c * g)

    return _node(c * a.data, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.accumulate(g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), bwd)


def relu(a: Tensor) -> Tensor:
    # strict > 0: subgradient at exactly 0 is 0
    mask = a.data > 0.0

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return _node(np.where(mask, a.data, 0.0), (a,), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``w @ x + b`` for 1-d ``x``, ``x @ w.T + b`` for batches.

    The 1-d path is written as ``w @ x`` deliberately so single-sample
    logits match the head-matrix product bit for bit.
    """
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.data.ndim == 1:
        out_data = w.data @ x.data + b.data

        def bwd(g):
            if x.requires_grad:
                x.accumulate(w.data.T @ g)
            if w.requires_grad:
                w.accumulate(np.outer(g, x.data))
            if b.requires_grad:
                b.accumulate(g)

    else:
        out_data = x.data @ w.data.T + b.data

        def bwd(g):
            if x.requires_grad:
                x.accumulate(g @ w.data)
            if w.requires_grad:
                w.accumulate(g.T @ x.data)
            if b.requires_grad:
                b.accumulate(g.sum(axis=0))

    return _node(out_data, (x, w, b), bwd)


def conv2d(x: Tensor, filters: Tensor, bias: Tensor) -> Tensor:
    """Valid 2-d convolution, stride 1: (N, s, s) -> (N, F, o, o)."""
    x, filters, bias = _wrap(x), _wrap(filters), _wrap(bias)
    n, s, _ = x.data.shape
    f, k, _ = filters.data.shape
    o = s - k + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(1, 2))
    cols = windows.reshape(n, o * o, k * k)
    w2 = filters.data.reshape(f, k * k)
    out_data = (cols @ w2.T).transpose(0, 2, 1).reshape(n, f, o, o) + bias.data[None, :, None, None]

    def bwd(g):
        g2 = g.reshape(n, f, o * o).transpose(0, 2, 1)  # (N, o*o, F)
        if filters.requires_grad:
            gw = np.einsum("npf,npk->fk", g2, cols)
            filters.accumulate(gw.reshape(f, k, k))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(n, o, o, k, k)
            gx = np.zeros_like(x.data)
            for di in range(k):
                for dj in range(k):
                    gx[:, di:di + o, dj:dj + o] += gcols[:, :, :, di, dj]
            x.accumulate(gx)

    return _node(out_data, (x, filters, bias), bwd)


def global_mean_pool(a: Tensor) -> Tensor:
    """(N, F, o, o) -> (N, F) by averaging the spatial axes."""
    n, f, o, _ = a.data.shape

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.broadcast_to(g[:, :, None, None] / (o * o), a.data.shape))

    return _node(a.data.mean(axis=(2, 3)), (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.data, float(g)))

    return _node(a.data.sum(), (a,), bwd)


def gather(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            a.accumulate(ga)

    return _node(a.data[idx], (a,), bwd)


def vec_max(a: Tensor) -> Tensor:
    i = int(np.argmax(a.data))  # first occurrence on ties

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[i] = float(g)
            a.accumulate(ga)

    return _node(a.data[i], (a,), bwd)


def vec_min(a: Tensor) -> Tensor:
    i = int(np.argmin(a.data))

    def bwd(g):
        if a.requires_grad:
            ga = np.zeros_like(a.data)
            ga[i] = float(g)
            a.accumulate(ga)

    return _node(a.data[i], (a,), bwd)


# ---------------------------------------------------------------------------
# norms (subgradient 0 at the non-differentiable point)


def sqnorm(a: Tensor) -> Tensor:
    """Sum of squares (smooth everywhere, unlike the norms below)."""

    def bwd(g):
        if a.requires_grad:
            a.accumulate(2.0 * float(g) * a.data)

    return _node(np.dot(a.data.ravel(), a.data.ravel()), (a,), bwd)


def l1_norm(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.accumulate(float(g) * np.sign(a.data))

    return _node(np.abs(a.data).sum(), (a,), bwd)


def l2_norm(a: Tensor, zero_tol: float = 0.0) -> Tensor:
    """Unsquared Euclidean norm; gradient 0 whenever the norm <= zero_tol."""
    n = float(np.sqrt(np.dot(a.data.ravel(), a.data.ravel())))

    def bwd(g):
        if a.requires_grad and n > zero_tol:
            a.accumulate((float(g) / n) * a.data)

    return _node(n, (a,), bwd)


def linf_norm(a: Tensor) -> Tensor:
    mags = np.abs(a.data)
    i = int(np.argmax(mags))
    sgn = np.sign(a.data.flat[i])

    def bwd(g):
        if a.requires_grad and sgn != 0.0:
            ga = np.zeros_like(a.data)
            ga.flat[i] = float(g) * sgn
            a.accumulate(ga)

    return _node(mags.flat[i], (a,), bwd)


# ---------------------------------------------------------------------------
# fused classification losses


def softmax_kl(logits: Tensor, ref: np.ndarray) -> Tensor:
    """KL(softmax(logits) || ref) for a 1-d logit vector; ref is constant."""
    ref = np.asarray(ref, dtype=np.float64)
    if np.any(ref <= 0.0):
        raise ValueError("reference distribution must be strictly positive")
    z = logits.data - logits.data.max()
    logp = z - np.log(np.exp(z).sum())
    p = np.exp(logp)
    a = logp - np.log(ref)
    val = float(np.dot(p, a))

    def bwd(g):
        if logits.requires_grad:
            logits.accumulate(float(g) * p * (a - val))

    return _node(val, (logits,), bwd)


def cross_entropy_mean(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy over a batch of logit rows; labels are constant ints."""
    labels = np.asarray(labels, dtype=np.intp)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = logits.data.shape[0]
    rows = np.arange(n)
    val = float(np.mean(lse - z[rows, labels]))

    def bwd(g):
        if logits.requires_grad:
            p = np.exp(z - lse[:, None])
            p[rows, labels] -= 1.0
            logits.accumulate((float(g) / n) * p)

    return _node(val, (logits,), bwd)
