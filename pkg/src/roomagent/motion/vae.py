"""Causal sequence VAE: frames -> latent token distributions -> frames.

Causality contract: in the decoder, frame n may attend to latent tokens
0..floor(n/r) only (growing memory window) and to earlier frames; latent token
k attends to tokens 0..k. The deterministic decode path computes attention
with per-row prefix slices, so decoding a latent prefix is bit-identical to
the matching prefix of a longer joint decode - the same arithmetic path runs.

The encoder gives token k access to frames up to the end of its span
(n <= (k+1)r - 1) and to earlier tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, no_grad, parameter
from .frames import MotionClip, frame_dim
from .nn import MASK_NEG, Linear, Module, SkipTransformer, sinusoidal_embedding


@dataclass
class ModelConfig:
    """Sizes for the VAE and the denoiser. Defaults are the desk-scale toy;
    paper_scale() gives the full-size hyperparameters."""

    n_joints: int = 6
    latent_dim: int = 64             # H
    frames_per_token: int = 4        # r
    width: int = 64
    n_layers: int = 3
    n_heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    prefix_frames: int = 20
    future_frames: int = 40
    # the denoiser sees short sequences (future tokens + a small memory), so
    # it affords a wider trunk than the VAE; zero means "same as the VAE"
    denoiser_width: int = 0
    denoiser_layers: int = 0
    denoiser_heads: int = 0
    denoiser_ff: int = 0

    @property
    def frame_dim(self) -> int:
        return frame_dim(self.n_joints)

    @property
    def prefix_tokens(self) -> int:
        return self.prefix_frames // self.frames_per_token

    @property
    def future_tokens(self) -> int:
        return self.future_frames // self.frames_per_token

    @staticmethod
    def paper_scale() -> "ModelConfig":
        return ModelConfig(width=256, n_layers=9, n_heads=4, d_ff=1024,
                           denoiser_width=256, denoiser_layers=9,
                           denoiser_heads=4, denoiser_ff=1024)

    def to_dict(self) -> dict:
        return {
            "n_joints": self.n_joints, "latent_dim": self.latent_dim,
            "frames_per_token": self.frames_per_token, "width": self.width,
            "n_layers": self.n_layers, "n_heads": self.n_heads, "d_ff": self.d_ff,
            "dropout": self.dropout, "prefix_frames": self.prefix_frames,
            "future_frames": self.future_frames,
            "denoiser_width": self.denoiser_width,
            "denoiser_layers": self.denoiser_layers,
            "denoiser_heads": self.denoiser_heads,
            "denoiser_ff": self.denoiser_ff,
        }


@dataclass
class LatentSeq:
    tokens: np.ndarray               # (L, H)
    frames_per_token: int

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 2:
            raise ValueError("tokens must be LxH")

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    def concat(self, other: "LatentSeq") -> "LatentSeq":
        if other.frames_per_token != self.frames_per_token:
            raise ValueError("mismatched frames_per_token")
        return LatentSeq(np.concatenate([self.tokens, other.tokens]), self.frames_per_token)


def encoder_mask(n_tokens: int, n_frames: int, r: int) -> np.ndarray:
    """Additive causal mask for the encoder's [tokens; frames] sequence.
    Token k reads times up to (k+1)r-1; frame n reads times up to n."""
    times = np.concatenate(
        [(np.arange(n_tokens) + 1) * r - 1, np.arange(n_frames)]
    )
    return np.where(times[None, :] <= times[:, None], 0.0, MASK_NEG)


def decoder_self_limits(n_tokens: int, n_frames: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-row key counts for the decoder's two self-attention segments.
    Token row k: tokens 0..k, no frames. Frame row n: tokens 0..floor(n/r),
    frames 0..n."""
    tok_rows_tok = np.arange(n_tokens) + 1
    tok_rows_frm = np.zeros(n_tokens, dtype=int)
    frm_rows_tok = np.arange(n_frames) // r + 1
    frm_rows_frm = np.arange(n_frames) + 1
    return (
        np.concatenate([tok_rows_tok, frm_rows_tok]),
        np.concatenate([tok_rows_frm, frm_rows_frm]),
    )


def decoder_cross_limits(n_tokens: int, n_frames: int, r: int) -> np.ndarray:
    """Growing memory window over the latent tokens."""
    return np.concatenate(
        [np.arange(n_tokens) + 1, np.arange(n_frames) // r + 1]
    )


def _limits_to_mask(tok_limits: np.ndarray, frm_limits: np.ndarray, n_tokens: int,
                    n_frames: int) -> np.ndarray:
    cols_tok = np.arange(n_tokens)[None, :]
    cols_frm = np.arange(n_frames)[None, :]
    mask_tok = np.where(cols_tok < tok_limits[:, None], 0.0, MASK_NEG)
    mask_frm = np.where(cols_frm < frm_limits[:, None], 0.0, MASK_NEG)
    return np.concatenate([mask_tok, mask_frm], axis=1)


class CausalVae(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        w = cfg.width
        self.in_proj = Linear(cfg.frame_dim, w, rng)
        self.enc_token_role = parameter(rng.normal(0, 0.02, size=w))
        self.enc_frame_role = parameter(rng.normal(0, 0.02, size=w))
        self.encoder = SkipTransformer(cfg.n_layers, w, cfg.n_heads, cfg.d_ff, rng)
        self.mean_head = Linear(w, cfg.latent_dim, rng, zero_init=True)
        self.logvar_head = Linear(w, cfg.latent_dim, rng, zero_init=True)

        self.z_proj = Linear(cfg.latent_dim, w, rng)
        self.dec_token_role = parameter(rng.normal(0, 0.02, size=w))
        self.dec_frame_role = parameter(rng.normal(0, 0.02, size=w))
        self.decoder = SkipTransformer(
            cfg.n_layers, w, cfg.n_heads, cfg.d_ff, rng, cross=True
        )
        self.out_head = Linear(w, cfg.frame_dim, rng, zero_init=True)

    # -- encoder -----------------------------------------------------------

    def _encode_graph(self, frames: Tensor, dropout_rng=None) -> tuple[Tensor, Tensor]:
        """frames: (B, F, D) -> (mean, logvar), each (B, L, H)."""
        b, f = frames.shape[0], frames.shape[1]
        r = self.cfg.frames_per_token
        if f % r:
            raise ValueError(f"frame count {f} not divisible by token span {r}")
        l = f // r
        w = self.cfg.width
        frame_in = self.in_proj(frames) + Tensor(
            sinusoidal_embedding(np.arange(f), w)
        ) + self.enc_frame_role
        token_in = Tensor(np.zeros((b, l, w))) + Tensor(
            sinusoidal_embedding(np.arange(l), w)
        ) + self.enc_token_role
        seq = concat([token_in, frame_in], axis=1)
        mask = encoder_mask(l, f, r)
        dropout = self.cfg.dropout if dropout_rng is not None else 0.0
        out = self.encoder(seq, self_mask=mask, dropout=dropout, rng=dropout_rng)
        tokens = out[:, :l, :]
        return self.mean_head(tokens), self.logvar_head(tokens)

    def encode(self, clip: MotionClip, sample_rng: np.random.Generator | None = None):
        """Deterministic mode (sample_rng=None) returns the mean as sample."""
        with no_grad():
            mean_t, logvar_t = self._encode_graph(Tensor(clip.frames[None]))
        mean = mean_t.data[0]
        logvar = logvar_t.data[0]
        if sample_rng is None:
            sample = mean.copy()
        else:
            sample = mean + np.exp(0.5 * logvar) * sample_rng.standard_normal(mean.shape)
        r = self.cfg.frames_per_token
        return LatentSeq(mean, r), LatentSeq(logvar, r), LatentSeq(sample, r)

    # -- decoder -----------------------------------------------------------

    def _decoder_inputs(self, l: int, f: int):
        w = self.cfg.width
        tok_pos = sinusoidal_embedding(np.arange(l), w)
        frm_pos = sinusoidal_embedding(np.arange(f), w)
        return tok_pos, frm_pos

    def _decode_graph(self, z: Tensor, n_frames: int, dropout_rng=None) -> Tensor:
        """z: (B, L, H) -> frames (B, F, D), training/graph path."""
        b, l = z.shape[0], z.shape[1]
        r = self.cfg.frames_per_token
        if n_frames != l * r:
            raise ValueError(f"frame count {n_frames} != tokens {l} x span {r}")
        tok_pos, frm_pos = self._decoder_inputs(l, n_frames)
        tok_in = self.z_proj(z) + Tensor(tok_pos) + self.dec_token_role
        frm_in = Tensor(np.zeros((b, n_frames, self.cfg.width))) + Tensor(frm_pos) \
            + self.dec_frame_role
        seq = concat([tok_in, frm_in], axis=1)
        lim_tok, lim_frm = decoder_self_limits(l, n_frames, r)
        self_mask = _limits_to_mask(lim_tok, lim_frm, l, n_frames)
        cross_lim = decoder_cross_limits(l, n_frames, r)
        cross_mask = np.where(
            np.arange(l)[None, :] < cross_lim[:, None], 0.0, MASK_NEG
        )
        dropout = self.cfg.dropout if dropout_rng is not None else 0.0
        out = self.decoder(
            seq, self_mask=self_mask, memory=tok_in, cross_mask=cross_mask,
            dropout=dropout, rng=dropout_rng,
        )
        return self.out_head(out[:, l:, :])

    def decode(self, latents: LatentSeq, n_frames: int) -> MotionClip:
        """Deterministic decode via prefix-sliced attention; decoding a token
        prefix reproduces the matching frame prefix exactly."""
        l = latents.n_tokens
        r = self.cfg.frames_per_token
        if n_frames != l * r:
            raise ValueError(f"frame count {n_frames} != tokens {l} x span {r}")
        tok_pos, frm_pos = self._decoder_inputs(l, n_frames)
        tok_in = self.z_proj.apply_np(latents.tokens) + tok_pos + self.dec_token_role.data
        frm_in = np.tile(self.dec_frame_role.data, (n_frames, 1)) + frm_pos
        seq = np.concatenate([tok_in, frm_in], axis=0)
        self_limits = decoder_self_limits(l, n_frames, r)
        cross_limits = (decoder_cross_limits(l, n_frames, r),)
        out = self.decoder.apply_sliced(
            seq, self_limits, split=l, memory=tok_in, cross_limits=cross_limits
        )
        return MotionClip(self.out_head.apply_np(out[l:]))


def kl_divergence(mean: Tensor, logvar: Tensor) -> Tensor:
    """KL(q || N(0, I)) summed over latent dims, averaged over batch+tokens."""
    term = (logvar.exp() + mean * mean - logvar - 1.0) * 0.5
    return term.sum(axis=-1).mean()
