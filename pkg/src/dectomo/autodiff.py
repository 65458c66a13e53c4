"""Minimal reverse-mode tape over float64 ndarrays.

Just enough machinery to differentiate the unrolled reconstruction loop:
each operation returns a :class:`Var` holding its value, its parents, and a
vector-Jacobian-product closure. Every backward rule here is checked against
central finite differences in the test suite.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Var:
    """A tape node: value, accumulated gradient, and the VJP to its parents."""

    __slots__ = ("value", "grad", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))
    return order


def backward(root):
    """Accumulate gradients of a scalar ``root`` into every reachable node."""
    if root.value.ndim != 0:
        raise ValueError("backward expects a scalar root")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones(())
    for node in reversed(order):
        if node.vjp is None or node.grad is None:
            continue
        for parent, grad in zip(node.parents, node.vjp(node.grad)):
            if grad is None:
                continue
            parent.grad = grad if parent.grad is None else parent.grad + grad


def constant(value):
    return Var(value)


def add(a, b):
    return Var(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b):
    return Var(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b):
    return Var(a.value * b.value, (a, b), lambda g: (g * b.value, g * a.value))


def scale(a, s):
    return Var(a.value * s, (a,), lambda g: (g * s,))


def relu(a):
    mask = a.value > 0
    return Var(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


# Nonnegativity projection; subgradient 1 where the input is positive.
clamp_nonneg = relu


def total(a):
    return Var(a.value.sum(), (a,), lambda g: (g * np.ones_like(a.value),))


def dot_const(a, u):
    u = np.asarray(u, dtype=np.float64)
    return Var(np.sum(a.value * u), (a,), lambda g: (g * u,))


def mse(a, target):
    target = np.asarray(target, dtype=np.float64)
    diff = a.value - target
    n = diff.size
    return Var(np.mean(diff * diff), (a,), lambda g: (g * 2.0 * diff / n,))


def _conv_value(x, w, b):
    """Same-padded 2-D multichannel correlation; x (Ci,H,W), w (Co,Ci,k,k)."""
    co, ci, k, _ = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    patches = sliding_window_view(xp, (k, k), axis=(1, 2))  # (Ci, H, W, k, k)
    h, wd = x.shape[1], x.shape[2]
    cols = patches.transpose(1, 2, 0, 3, 4).reshape(h * wd, ci * k * k)
    out = cols @ w.reshape(co, ci * k * k).T
    if b is not None:
        out = out + b[None, :]
    return out.T.reshape(co, h, wd), cols


def conv2d(x, w, b):
    """Zero-padded stride-1 convolution node; kernels must be odd-sized.

    ``x`` is (C_in, H, W); ``w`` is (C_out, C_in, k, k); ``b`` is (C_out,).
    """
    co, ci, k, _ = w.value.shape
    if k % 2 != 1:
        raise ValueError("kernel size must be odd")
    if x.value.ndim != 3 or x.value.shape[0] != ci:
        raise ValueError(
            f"input shape {x.value.shape} incompatible with kernel {w.value.shape}"
        )
    value, cols = _conv_value(x.value, w.value, b.value if b is not None else None)

    def vjp(g):
        h, wd = x.value.shape[1], x.value.shape[2]
        g_mat = g.reshape(co, h * wd)
        grad_w = (g_mat @ cols).reshape(co, ci, k, k)
        # grad wrt input: same-padded convolution with channel-swapped,
        # spatially flipped kernels
        w_flip = w.value[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        grad_x, _ = _conv_value(g, w_flip, None)
        grads = [grad_x, grad_w]
        if b is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return Var(value, parents, vjp)
