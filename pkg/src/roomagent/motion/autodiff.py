"""Minimal reverse-mode autodiff on numpy float64 arrays.

Only what the motion models need: broadcasting elementwise ops, batched
matmul, slicing/concat, reductions, stable softmax, GELU, and a dropout op
with an injectable RNG. Gradients accumulate on leaf tensors created with
requires_grad=True; `backward()` runs a topological sweep from a scalar loss.
"""

from __future__ import annotations

import contextlib

import numpy as np
from scipy.special import erf

try:
    # the model's matrices are tiny (width <= 256); BLAS worker threads only
    # add sync overhead, catastrophically so on single-core boxes
    import threadpoolctl

    _THREAD_LIMITER = threadpoolctl.threadpool_limits(limits=1)
except Exception:  # optional dependency of scikit-learn; absence is fine
    _THREAD_LIMITER = None

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad and _GRAD_ENABLED
        self._parents: tuple = ()
        self._backward = None

    # -- graph plumbing ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def _accumulate(self, grad: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def zero_grad(self):
        self.grad = None

    # -- op helpers ----------------------------------------------------------

    @staticmethod
    def _wrap(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def _make(self, data, parents, backward) -> "Tensor":
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- elementwise ---------------------------------------------------------

    def __add__(self, other):
        other = self._wrap(other)

        def back(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return self._make(self.data + other.data, (self, other), back)

    __radd__ = __add__

    def __mul__(self, other):
        other = self._wrap(other)

        def back(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        return self._make(self.data * other.data, (self, other), back)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __truediv__(self, other):
        other = self._wrap(other)
        return self * other ** -1.0

    def __pow__(self, exponent: float):
        def back(g):
            self._accumulate(
                _unbroadcast(g * exponent * self.data ** (exponent - 1.0), self.shape)
            )

        return self._make(self.data ** exponent, (self,), back)

    def exp(self):
        out_data = np.exp(self.data)

        def back(g):
            self._accumulate(g * out_data)

        return self._make(out_data, (self,), back)

    def log(self):
        def back(g):
            self._accumulate(g / self.data)

        return self._make(np.log(self.data), (self,), back)

    def gelu(self):
        x = self.data
        cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
        out_data = x * cdf

        def back(g):
            pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
            self._accumulate(g * (cdf + x * pdf))

        return self._make(out_data, (self,), back)

    # -- shape ops -----------------------------------------------------------

    def reshape(self, *shape):
        old = self.shape

        def back(g):
            self._accumulate(g.reshape(old))

        return self._make(self.data.reshape(*shape), (self,), back)

    def swapaxes(self, a: int, b: int):
        def back(g):
            self._accumulate(g.swapaxes(a, b))

        return self._make(self.data.swapaxes(a, b), (self,), back)

    def __getitem__(self, key):
        def back(g):
            full = np.zeros_like(self.data)
            full[key] = g
            self._accumulate(full)

        return self._make(self.data[key], (self,), back)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def back(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            gg = g if keepdims else np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(gg, self.shape).copy())

        return self._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # -- linear algebra --------------------------------------------------------

    def matmul(self, other: "Tensor"):
        other = self._wrap(other)
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise ValueError("matmul needs >= 2-D operands (reshape row vectors)")

        def back(g):
            ga = g @ other.data.swapaxes(-1, -2)
            gb = self.data.swapaxes(-1, -2) @ g
            self._accumulate(_unbroadcast(ga, self.shape))
            other._accumulate(_unbroadcast(gb, other.shape))

        return self._make(self.data @ other.data, (self, other), back)

    __matmul__ = matmul

    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            self._accumulate(out_data * (g - inner))

        return self._make(out_data, (self,), back)

    def dropout(self, p: float, rng: np.random.Generator):
        if p <= 0.0:
            return self
        keep = (rng.random(self.shape) >= p) / (1.0 - p)

        def back(g):
            self._accumulate(g * keep)

        return self._make(self.data * keep, (self,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Fused last-axis layer normalization with affine parameters."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    out_data = y * gamma.data + beta.data

    def back(g):
        dims = tuple(range(g.ndim - 1))
        beta._accumulate(g.sum(axis=dims))
        gamma._accumulate((g * y).sum(axis=dims))
        dy = g * gamma.data
        n = x.data.shape[-1]
        dx = inv * (
            dy
            - dy.mean(axis=-1, keepdims=True)
            - y * (dy * y).mean(axis=-1, keepdims=True)
        )
        x._accumulate(dx)

    out = Tensor(out_data)
    if _GRAD_ENABLED and any(t.requires_grad or t._parents for t in (x, gamma, beta)):
        out.requires_grad = True
        out._parents = (x, gamma, beta)
        out._backward = back
    return out


def fused_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None,
                    scale: float) -> Tensor:
    """softmax(q k^T * scale + mask) v in one graph node; q, k, v are
    (B, heads, L, d_head). Masked positions get exactly zero weight."""
    scores = (q.data @ k.data.swapaxes(-1, -2)) * scale
    if mask is not None:
        scores = scores + mask
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    out_data = attn @ v.data

    def back(g):
        v._accumulate(attn.swapaxes(-1, -2) @ g)
        d_attn = g @ v.data.swapaxes(-1, -2)
        inner = (d_attn * attn).sum(axis=-1, keepdims=True)
        d_scores = attn * (d_attn - inner)
        q._accumulate((d_scores @ k.data) * scale)
        k._accumulate((d_scores.swapaxes(-1, -2) @ q.data) * scale)

    out = Tensor(out_data)
    if _GRAD_ENABLED and any(t.requires_grad or t._parents for t in (q, k, v)):
        out.requires_grad = True
        out._parents = (q, k, v)
        out._backward = back
    return out


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor._wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def back(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            t._accumulate(g[tuple(sl)])
            offset += size

    out = Tensor(data)
    if _GRAD_ENABLED and any(t.requires_grad or t._parents for t in tensors):
        out.requires_grad = True
        out._parents = tuple(tensors)
        out._backward = back
    return out


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
