"""Two-phase training: reconstruction VAE first, then the noise-prediction
denoiser on frozen latents.

Optimizer: adaptive moments (0.9 / 0.999), decoupled weight decay 0, eps 1e-8,
gradient norm clipped to 1.0; learning rate 5e-4 with linear warm-up then
cosine decay. Denoiser batches drop the caption/control condition with
probability 0.1 (per-channel Bernoulli masks approximate the predefined
control-combination sampling).
"""

from __future__ import annotations

import contextlib
import gc
import math
from dataclasses import dataclass, field

import numpy as np

try:
    # keep glibc from mmap/munmap-ing the large per-step temporaries; the
    # page-fault churn otherwise dominates the step time
    import ctypes

    _libc = ctypes.CDLL("libc.so.6", use_errno=True)
    _libc.mallopt(-3, 512 * 1024 * 1024)  # M_MMAP_THRESHOLD
    _libc.mallopt(-1, 512 * 1024 * 1024)  # M_TRIM_THRESHOLD
except Exception:  # non-glibc platform; purely a performance tweak
    pass


@contextlib.contextmanager
def _gc_paused():
    """The op graph is acyclic (refcounting frees it); cyclic GC sweeps over
    the many live graph nodes only add pauses."""
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()

from .autodiff import Tensor
from .conditioning import CHANNEL_NAMES, ControlEncoder, ControlValues, embed_caption
from .diffusion import Denoiser, NoiseSchedule, SamplerConfig, q_sample
from .frames import MotionClip
from .vae import CausalVae, ModelConfig, kl_divergence


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    warmup_steps: int = 2000
    grad_clip: float = 1.0
    kl_weight: float = 1e-4
    uncond_prob: float = 0.1
    high_t_fraction: float = 0.3   # denoiser batches drawn from t >= 0.7 T
    batch_size: int = 16
    vae_steps: int = 2000
    denoiser_steps: int = 2000
    seed: int = 1234
    dropout: bool = True


class AdamW:
    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0

    def clip_gradients(self) -> float:
        total = 0.0
        for p in self.params.values():
            if p.grad is not None:
                total += float((p.grad * p.grad).sum())
        norm = math.sqrt(total)
        if self.cfg.grad_clip > 0 and norm > self.cfg.grad_clip:
            scale = self.cfg.grad_clip / norm
            for p in self.params.values():
                if p.grad is not None:
                    p.grad *= scale
        return norm

    def step(self, lr: float):
        self.t += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            m_hat = self.m[k] / bc1
            v_hat = self.v[k] / bc2
            p.data -= lr * (m_hat / (np.sqrt(v_hat) + c.eps) + c.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warm-up to cfg.lr, then cosine decay to zero."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * (step + 1) / cfg.warmup_steps
    span = max(total_steps - cfg.warmup_steps, 1)
    progress = min(max(step - cfg.warmup_steps, 0) / span, 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainSample:
    clip: MotionClip                      # prefix + future frames
    caption: str
    controls: ControlValues


@dataclass
class Normalizer:
    """Per-channel standardization of frame features; the motion model works
    in normalized space, raw clips are converted at the executor boundary."""

    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def fit(samples: list["TrainSample"], floor: float = 0.02) -> "Normalizer":
        stacked = np.concatenate([s.clip.frames for s in samples])
        mean = stacked.mean(axis=0)
        std = np.maximum(stacked.std(axis=0), floor)
        return Normalizer(mean=mean, std=std)

    @staticmethod
    def identity(dim: int) -> "Normalizer":
        return Normalizer(mean=np.zeros(dim), std=np.ones(dim))

    def apply(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.mean) / self.std

    def invert(self, frames: np.ndarray) -> np.ndarray:
        return frames * self.std + self.mean

    def normalize_samples(self, samples: list["TrainSample"]) -> list["TrainSample"]:
        return [
            TrainSample(
                clip=MotionClip(self.apply(s.clip.frames)),
                caption=s.caption,
                controls=s.controls,
            )
            for s in samples
        ]


def _check_divergence(losses: list[float], window: int = 100):
    latest = losses[-1]
    if not math.isfinite(latest):
        raise TrainingDiverged(f"non-finite loss at step {len(losses) - 1}")
    if len(losses) < window + 1:
        return
    initial = losses[0]
    recent = losses[-window:]
    if initial > 0 and all(l > 10.0 * initial for l in recent):
        raise TrainingDiverged(
            f"loss stuck above 10x initial ({initial:.4g}) for {window} steps"
        )


def train_vae(
    vae: CausalVae,
    samples: list[TrainSample],
    cfg: TrainConfig,
    log_every: int = 0,
) -> list[float]:
    rng = np.random.default_rng(cfg.seed)
    params = vae.named_parameters()
    opt = AdamW(params, cfg)
    losses: list[float] = []
    n_frames = vae.cfg.prefix_frames + vae.cfg.future_frames
    for step in range(cfg.vae_steps):
        idx = rng.integers(0, len(samples), size=cfg.batch_size)
        batch = np.stack([samples[i].clip.frames for i in idx])
        x = Tensor(batch)
        drop_rng = rng if cfg.dropout else None
        mean, logvar = vae._encode_graph(x, dropout_rng=drop_rng)
        noise = Tensor(rng.standard_normal(mean.shape))
        z = mean + (logvar * 0.5).exp() * noise
        recon = vae._decode_graph(z, n_frames, dropout_rng=drop_rng)
        err = recon - x
        loss = (err * err).mean() + cfg.kl_weight * kl_divergence(mean, logvar)
        opt.zero_grad()
        loss.backward()
        opt.clip_gradients()
        opt.step(lr_at(step, cfg.vae_steps, cfg))
        losses.append(float(loss.data))
        _check_divergence(losses)
        if log_every and (step + 1) % log_every == 0:
            print(f"vae step {step + 1}/{cfg.vae_steps} loss {losses[-1]:.5f}")
    return losses


def train_denoiser(
    denoiser: Denoiser,
    vae: CausalVae,
    control_encoder: ControlEncoder,
    samples: list[TrainSample],
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    log_every: int = 0,
    latent_scale: float = 1.0,
) -> list[float]:
    """L_simple on frozen VAE latents (divided by latent_scale so diffusion
    sees unit-variance data); the control encoder trains jointly with the
    denoiser (its outputs are condition tokens)."""
    rng = np.random.default_rng(cfg.seed + 1)
    params = dict(denoiser.named_parameters())
    params.update({f"ctrl.{k}": v for k, v in control_encoder.named_parameters().items()})
    opt = AdamW(params, cfg)
    losses: list[float] = []
    r = vae.cfg.frames_per_token
    lp = vae.cfg.prefix_tokens
    h = vae.cfg.latent_dim

    # precompute frozen latents and caption embeddings once
    latents = []
    captions = []
    for s in samples:
        mean, _, _ = vae.encode(s.clip)
        latents.append(mean.tokens / latent_scale)
        captions.append(embed_caption(s.caption, h))

    for step in range(cfg.denoiser_steps):
        idx = rng.integers(0, len(samples), size=cfg.batch_size)
        s0 = np.stack([latents[i][lp:] for i in idx])       # future tokens
        ctx = np.stack([latents[i][:lp] for i in idx])      # executed prefix
        # per-sample timesteps; a slice of each batch drawn from large t,
        # where few-step samplers need the most accuracy
        n_high = int(round(cfg.high_t_fraction * cfg.batch_size))
        t_low = rng.integers(1, schedule.n_steps + 1, size=cfg.batch_size - n_high)
        t_high = rng.integers(int(0.7 * schedule.n_steps), schedule.n_steps + 1,
                              size=n_high)
        t = np.concatenate([t_low, t_high])
        noise = rng.standard_normal(s0.shape)
        abars = schedule.alpha_bars[t - 1][:, None, None]
        st = np.sqrt(abars) * s0 + np.sqrt(1.0 - abars) * noise

        s_m = np.stack([captions[i] for i in idx])
        s_c_rows = []
        for i in idx:
            controls = samples[i].controls
            if rng.random() < cfg.uncond_prob:
                s_c_rows.append(Tensor(np.zeros(h)))
                continue
            # per-channel Bernoulli keep-mask over the present channels
            kept = ControlValues(
                location=controls.location if rng.random() < 0.75 else None,
                facing=controls.facing if rng.random() < 0.75 else None,
                speed=controls.speed if rng.random() < 0.75 else None,
                joints={
                    k: v for k, v in controls.joints.items() if rng.random() < 0.75
                },
            )
            s_c_rows.append(control_encoder(kept))
        if rng.random() < cfg.uncond_prob:
            s_m = np.zeros_like(s_m)
        s_c = concat_rows(s_c_rows)

        drop_rng = rng if cfg.dropout else None
        eps_hat = denoiser.graph(
            Tensor(st), t, Tensor(ctx), Tensor(s_m), s_c, dropout_rng=drop_rng
        )
        err = eps_hat - Tensor(noise)
        loss = (err * err).mean()
        opt.zero_grad()
        loss.backward()
        opt.clip_gradients()
        opt.step(lr_at(step, cfg.denoiser_steps, cfg))
        losses.append(float(loss.data))
        _check_divergence(losses)
        if log_every and (step + 1) % log_every == 0:
            print(f"denoiser step {step + 1}/{cfg.denoiser_steps} loss {losses[-1]:.5f}")
    return losses


def concat_rows(rows) -> Tensor:
    from .autodiff import concat

    return concat([r.reshape(1, -1) for r in rows], axis=0)


def write_loss_csv(path, losses: list[float], label: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss,phase\n")
        for i, loss in enumerate(losses):
            fh.write(f"{i},{loss!r},{label}\n")
