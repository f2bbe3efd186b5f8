"""Transformer building blocks on the autodiff core.

Layers follow pre-norm residual wiring. Attention limits are expressed as the
number of attendable key positions per query row; the vectorized path turns
them into an additive mask whose disallowed entries underflow to exactly zero
weight after the stable softmax.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, fused_attention, layer_norm, parameter

MASK_NEG = -1.0e9


class Module:
    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, zero_init=False):
        if zero_init:
            self.weight = parameter(np.zeros((d_in, d_out)))
        else:
            self.weight = parameter(_glorot(rng, d_in, d_out))
        self.bias = parameter(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        """Deterministic-path application: row-wise vector-matrix products so
        the result for row i never depends on how many rows follow it (BLAS
        may block differently for different matrix heights)."""
        w, b = self.weight.data, self.bias.data
        out = np.empty((x.shape[0], w.shape[1]))
        for i in range(x.shape[0]):
            out[i] = x[i] @ w
        out += b
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = parameter(np.ones(dim))
        self.beta = parameter(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / np.sqrt(var + self.eps) * self.gamma.data + self.beta.data


def limits_to_mask(limits: np.ndarray, n_keys: int) -> np.ndarray:
    """Additive mask (Lq, Lk): row i may attend to keys [0, limits[i])."""
    cols = np.arange(n_keys)[None, :]
    return np.where(cols < np.asarray(limits)[:, None], 0.0, MASK_NEG)


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ValueError("d_model must divide by n_heads")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor, batch: int, length: int) -> Tensor:
        return x.reshape(batch, length, self.n_heads, self.d_head).swapaxes(1, 2)

    def __call__(self, x_q: Tensor, x_kv: Tensor, mask: np.ndarray | None = None) -> Tensor:
        b, lq = x_q.shape[0], x_q.shape[1]
        lk = x_kv.shape[1]
        q = self._split(self.wq(x_q), b, lq)
        k = self._split(self.wk(x_kv), b, lk)
        v = self._split(self.wv(x_kv), b, lk)
        out = fused_attention(q, k, v, mask, 1.0 / np.sqrt(self.d_head))
        out = out.swapaxes(1, 2).reshape(b, lq, self.n_heads * self.d_head)
        return self.wo(out)

    def apply_sliced(self, x_q: np.ndarray, kv_segments, segment_limits) -> np.ndarray:
        """Per-row prefix-sliced attention (no batch dim). Keys come from one
        or more segments; row i touches only the first segment_limits[s][i]
        keys of segment s, gathered in segment order. A prefix of the query
        rows therefore computes bit-identically regardless of what follows in
        any segment, which is what the decode-prefix guarantee rests on."""
        lq = x_q.shape[0]
        q = self.wq.apply_np(x_q).reshape(lq, self.n_heads, self.d_head)
        ks = [self.wk.apply_np(seg).reshape(-1, self.n_heads, self.d_head)
              for seg in kv_segments]
        vs = [self.wv.apply_np(seg).reshape(-1, self.n_heads, self.d_head)
              for seg in kv_segments]
        scale = 1.0 / np.sqrt(self.d_head)
        out = np.empty((lq, self.n_heads, self.d_head))
        for i in range(lq):
            parts_k = [k[: int(lims[i])] for k, lims in zip(ks, segment_limits)]
            parts_v = [v[: int(lims[i])] for v, lims in zip(vs, segment_limits)]
            ki = parts_k[0] if len(parts_k) == 1 else np.concatenate(parts_k)
            vi = parts_v[0] if len(parts_v) == 1 else np.concatenate(parts_v)
            scores = np.einsum("hd,lhd->hl", q[i] * scale, ki)
            scores -= scores.max(axis=-1, keepdims=True)
            e = np.exp(scores)
            w = e / e.sum(axis=-1, keepdims=True)
            out[i] = np.einsum("hl,lhd->hd", w, vi)
        return self.wo.apply_np(out.reshape(lq, self.n_heads * self.d_head))


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        self.lin1 = Linear(d_model, d_ff, rng)
        self.lin2 = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(self.lin1(x).gelu())

    def apply_np(self, x: np.ndarray) -> np.ndarray:
        h = self.lin1.apply_np(x)
        from scipy.special import erf

        h = h * 0.5 * (1.0 + erf(h / np.sqrt(2.0)))
        return self.lin2.apply_np(h)


class TransformerLayer(Module):
    """Pre-norm block: self-attention, optional cross-attention, feed-forward."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng, cross: bool = False):
        self.ln1 = LayerNorm(d_model)
        self.self_attn = MultiHeadAttention(d_model, n_heads, rng)
        self.cross_attn = MultiHeadAttention(d_model, n_heads, rng) if cross else None
        self.ln2 = LayerNorm(d_model) if cross else None
        self.ln3 = LayerNorm(d_model)
        self.ffn = FeedForward(d_model, d_ff, rng)

    def __call__(self, x, self_mask=None, memory=None, cross_mask=None,
                 dropout=0.0, rng=None):
        normed = self.ln1(x)
        h = self.self_attn(normed, normed, self_mask)
        if rng is not None and dropout > 0:
            h = h.dropout(dropout, rng)
        x = x + h
        if self.cross_attn is not None and memory is not None:
            h = self.cross_attn(self.ln2(x), memory, cross_mask)
            if rng is not None and dropout > 0:
                h = h.dropout(dropout, rng)
            x = x + h
        h = self.ffn(self.ln3(x))
        if rng is not None and dropout > 0:
            h = h.dropout(dropout, rng)
        return x + h

    def apply_sliced(self, x, self_limits, split=None, memory=None, cross_limits=None):
        """split partitions the sequence into [tokens; frames] key segments;
        self_limits/cross_limits are per-segment tuples of per-row counts."""
        normed = self.ln1.apply_np(x)
        segments = (normed,) if split is None else (normed[:split], normed[split:])
        x = x + self.self_attn.apply_sliced(normed, segments, self_limits)
        if self.cross_attn is not None and memory is not None:
            x = x + self.cross_attn.apply_sliced(
                self.ln2.apply_np(x), (memory,), cross_limits
            )
        return x + self.ffn.apply_np(self.ln3.apply_np(x))


class SkipTransformer(Module):
    """Layer stack with long skip connections: the first half's outputs are
    concatenated into the mirrored second half through linear projections."""

    def __init__(self, n_layers: int, d_model: int, n_heads: int, d_ff: int, rng,
                 cross: bool = False):
        if n_layers < 1 or n_layers % 2 == 0:
            raise ValueError("n_layers must be odd")
        self.layers = [
            TransformerLayer(d_model, n_heads, d_ff, rng, cross=cross)
            for _ in range(n_layers)
        ]
        half = n_layers // 2
        self.skips = [Linear(2 * d_model, d_model, rng) for _ in range(half)]

    def __call__(self, x, self_mask=None, memory=None, cross_mask=None,
                 dropout=0.0, rng=None):
        n = len(self.layers)
        half = n // 2
        saved = []
        for i, layer in enumerate(self.layers):
            if i >= n - half:
                skip = saved[n - 1 - i]
                x = self.skips[i - (n - half)](concat([x, skip], axis=-1))
            x = layer(x, self_mask, memory, cross_mask, dropout, rng)
            if i < half:
                saved.append(x)
        return x

    def apply_sliced(self, x, self_limits, split=None, memory=None, cross_limits=None):
        n = len(self.layers)
        half = n // 2
        saved = []
        for i, layer in enumerate(self.layers):
            if i >= n - half:
                skip = saved[n - 1 - i]
                x = self.skips[i - (n - half)].apply_np(
                    np.concatenate([x, skip], axis=-1)
                )
            x = layer.apply_sliced(x, self_limits, split, memory, cross_limits)
            if i < half:
                saved.append(x)
        return x


def sinusoidal_embedding(positions: np.ndarray, dim: int) -> np.ndarray:
    """Classic sine-cosine positional table for integer positions."""
    positions = np.asarray(positions, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = positions[..., None] * freqs
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=-1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(emb.shape[:-1] + (1,))], axis=-1)
    return emb
