"""A small reverse-mode autodiff engine over numpy arrays.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output cotangent to parent cotangents. ``grad`` walks the
graph once in reverse topological order; it never mutates the tensors, so the
same graph can be differentiated any number of times.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "parents", "vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return Tensor(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.value, (a,), lambda g: (-g,))


def matmul(a, w) -> Tensor:
    """``a[..., n] @ w[n, m]``; leading axes of ``a`` are batch axes."""
    a, w = as_tensor(a), as_tensor(w)
    if w.value.ndim != 2:
        raise ValueError("matmul expects a 2-D right operand")
    av, wv = a.value, w.value

    def vjp(g):
        ga = g @ wv.T
        gw = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gw

    return Tensor(av @ wv, (a, w), vjp)


def relu(a: Tensor) -> Tensor:
    on = a.value > 0
    return Tensor(np.where(on, a.value, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.value
    # split by sign so large |x| never overflows exp
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.value)
    return Tensor(t, (a,), lambda g: (g * (1.0 - t * t),))


ACTIVATIONS = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def expand_dims(a: Tensor, axis: int) -> Tensor:
    old = a.shape
    return Tensor(np.expand_dims(a.value, axis), (a,), lambda g: (g.reshape(old),))


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    shape = a.shape
    out = a.value.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return Tensor(out, (a,), vjp)


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts), vjp)


def masked_max(a: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    """Max over ``axis`` restricted to ``mask``; empty slices give 0."""
    x = a.value
    mask = np.broadcast_to(mask.astype(bool), x.shape)
    filled = np.where(mask, x, -np.inf)
    idx = np.expand_dims(np.argmax(filled, axis=axis), axis)
    has = np.any(mask, axis=axis)
    out = np.where(has, np.take_along_axis(filled, idx, axis=axis).squeeze(axis), 0.0)

    def vjp(g):
        ga = np.zeros_like(x)
        np.put_along_axis(ga, idx, np.expand_dims(np.where(has, g, 0.0), axis), axis=axis)
        return (ga,)

    return Tensor(out, (a,), vjp)


def _toposort(root: Tensor):
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(root: Tensor, seed, wrt) -> list:
    """Cotangents of ``wrt`` tensors given ``seed`` = d loss / d root."""
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != root.shape:
        raise ValueError(f"seed shape {seed.shape} does not match output shape {root.shape}")
    cot = {id(root): seed}
    for node in reversed(_toposort(root)):
        g = cot.get(id(node))
        if g is None or node.vjp is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            key = id(parent)
            cot[key] = pg if key not in cot else cot[key] + pg
    return [cot.get(id(t), np.zeros(t.shape)) for t in wrt]


# Fused ops. These do the same math as compositions of the primitives above
# but allocate fewer (B, K, K, H)-sized temporaries, which dominate GNN cost.

def _act_inplace(out: np.ndarray, act: str):
    """Apply ``act`` in place; return the derivative as a function of the output."""
    if act == "relu":
        np.maximum(out, 0.0, out=out)
        return lambda y: y > 0
    if act == "tanh":
        np.tanh(out, out=out)
        return lambda y: 1.0 - y * y
    if act == "sigmoid":
        out[...] = sigmoid(Tensor(out)).value
        return lambda y: y * (1.0 - y)
    if act is None:
        return None
    raise ValueError(f"unknown activation {act!r}")


def dense(x, w, b, act: str = None) -> Tensor:
    """``act(x @ w + b)`` with ``w`` 2-D and ``b`` 1-D."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xv, wv = x.value, w.value
    out = xv @ wv
    out += b.value
    deriv = _act_inplace(out, act)

    def vjp(g):
        if deriv is not None:
            g = g * deriv(out)
        g2 = g.reshape(-1, g.shape[-1])
        return g @ wv.T, xv.reshape(-1, xv.shape[-1]).T @ g2, g2.sum(axis=0)

    return Tensor(out, (x, w, b), vjp)


def edge_input(send, edge, w_edge, b, act: str = None) -> Tensor:
    """``act(send[:, :, None, :] + edge * w_edge + b)``.

    ``send`` is (B, J, H) per-sender, ``edge`` is (B, J, I, 1), ``w_edge`` is
    (1, H) and ``b`` is (H,); the result is (B, J, I, H).
    """
    send, edge, w_edge, b = (as_tensor(t) for t in (send, edge, w_edge, b))
    ev, wv = edge.value, w_edge.value
    out = ev * wv
    out += send.value[:, :, None, :]
    out += b.value
    deriv = _act_inplace(out, act)

    def vjp(g):
        if deriv is not None:
            g = g * deriv(out)
        g_send = g.sum(axis=2)
        g_edge = np.einsum("bjih,h->bji", g, wv[0])[..., None]
        g_w = np.einsum("bjih,bji->h", g, ev[..., 0])[None, :]
        g_b = g_send.sum(axis=(0, 1))
        return g_send, g_edge, g_w, g_b

    return Tensor(out, (send, edge, w_edge, b), vjp)


def masked_sum(a: Tensor, mask: np.ndarray) -> Tensor:
    """``sum_j mask[b, j, i] * a[b, j, i, :]`` for ``a`` of shape (B, J, I, H)."""
    av = a.value
    out = np.einsum("bjih,bji->bih", av, mask)

    def vjp(g):
        return (g[:, None, :, :] * mask[..., None],)

    return Tensor(out, (a,), vjp)
