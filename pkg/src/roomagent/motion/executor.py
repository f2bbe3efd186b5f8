"""Motion executor: command + executed/generated prefixes -> future motion.

Each rollout encodes the executed prefix (conditioning context) and the
previously generated prefix (decode context), samples future latent tokens
with guided DDIM, and jointly decodes [generated-prefix : future] so the new
motion continues the previous generation while adapting to what was actually
executed. World-frame commands are localized into the prefix-start root frame
before conditioning, matching how training controls are expressed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..commands import Command
from ..geometry import rot2, wrap_angle
from .checkpoint import assign_parameters, load_weights, save_weights
from .conditioning import ControlEncoder, ControlValues, embed_caption
from .diffusion import Denoiser, NoiseSchedule, SamplerConfig, ddim_sample
from .frames import MotionClip, Pose2, stance_clip
from .vae import CausalVae, LatentSeq, ModelConfig


def localize_command(command: Command, origin: Pose2) -> ControlValues:
    """Express a world-frame command in the window-start frame (origin pose at
    the prefix's first frame). Honors the command's control mask."""
    inv = rot2(-origin.facing)

    def to_local_xy(p):
        d = np.asarray(p, float) - origin.xy
        return inv @ d

    mask = command.control_mask
    location = None
    if command.location is not None and "location" in mask:
        location = tuple(to_local_xy(command.location))
    facing = None
    if command.facing is not None and "facing" in mask:
        facing = wrap_angle(command.facing - origin.facing)
    speed = command.speed if (command.speed is not None and "speed" in mask) else None
    joints = {}
    for name, tgt in command.joint_targets.items():
        if name not in mask:
            continue
        lx, ly = to_local_xy(tgt[:2])
        joints[name] = (float(lx), float(ly), float(tgt[2]))
    return ControlValues(location=location, facing=facing, speed=speed, joints=joints)


@dataclass
class MotionExecutor:
    cfg: ModelConfig
    vae: CausalVae
    denoiser: Denoiser
    control_encoder: ControlEncoder
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    normalizer: "Normalizer | None" = None
    # diffusion operates on unit-variance latents; VAE latents are divided by
    # this factor going in and multiplied coming out
    latent_scale: float = 1.0

    @staticmethod
    def create(cfg: ModelConfig | None = None, seed: int = 0) -> "MotionExecutor":
        cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)
        return MotionExecutor(
            cfg=cfg,
            vae=CausalVae(cfg, rng),
            denoiser=Denoiser(cfg, rng),
            control_encoder=ControlEncoder(cfg.latent_dim, rng),
        )

    def _normalize(self, clip: MotionClip) -> MotionClip:
        if self.normalizer is None:
            return clip
        return MotionClip(self.normalizer.apply(clip.frames))

    def _denormalize(self, clip: MotionClip) -> MotionClip:
        if self.normalizer is None:
            return clip
        return MotionClip(self.normalizer.invert(clip.frames))

    # -- persistence ---------------------------------------------------------

    def named_parameters(self):
        params = {}
        params.update({f"vae.{k}": v for k, v in self.vae.named_parameters().items()})
        params.update({f"den.{k}": v for k, v in self.denoiser.named_parameters().items()})
        params.update(
            {f"ctl.{k}": v for k, v in self.control_encoder.named_parameters().items()}
        )
        return params

    def save(self, path):
        tensors = {k: p.data for k, p in self.named_parameters().items()}
        if self.normalizer is not None:
            tensors["norm.mean"] = self.normalizer.mean
            tensors["norm.std"] = self.normalizer.std
        tensors["norm.latent_scale"] = np.array([self.latent_scale])
        save_weights(path, self.cfg.to_dict(), tensors)

    @staticmethod
    def load(path) -> "MotionExecutor":
        from .training import Normalizer

        config, tensors = load_weights(path)
        cfg = ModelConfig(**config)
        ex = MotionExecutor.create(cfg, seed=0)
        norm_mean = tensors.pop("norm.mean", None)
        norm_std = tensors.pop("norm.std", None)
        scale = tensors.pop("norm.latent_scale", None)
        assign_parameters(ex.named_parameters(), tensors)
        if norm_mean is not None and norm_std is not None:
            ex.normalizer = Normalizer(mean=norm_mean, std=norm_std)
        if scale is not None:
            ex.latent_scale = float(scale[0])
        return ex

    # -- sampling --------------------------------------------------------------

    def condition_tokens(self, command: Command, origin: Pose2):
        controls = localize_command(command, origin)
        s_m = embed_caption(command.caption, self.cfg.latent_dim)
        s_c = self.control_encoder.encode(controls)
        return s_m, s_c

    def sample_future(
        self,
        executed_latents: LatentSeq,
        command: Command,
        origin: Pose2 = Pose2(),
        rng: np.random.Generator | None = None,
        sampler: SamplerConfig | None = None,
    ) -> LatentSeq:
        rng = rng or np.random.default_rng(0)
        s_m, s_c = self.condition_tokens(command, origin)
        tokens = ddim_sample(
            self.denoiser, self.schedule,
            executed_latents.tokens / self.latent_scale, s_m, s_c,
            self.cfg.future_tokens, sampler or self.sampler, rng,
        )
        return LatentSeq(tokens * self.latent_scale, self.cfg.frames_per_token)

    def rollout(
        self,
        command: Command,
        executed_prefix: MotionClip,
        generated_prefix: MotionClip,
        origin: Pose2 = Pose2(),
        rng: np.random.Generator | None = None,
        sampler: SamplerConfig | None = None,
    ) -> MotionClip:
        """Future motion given the executed and previously generated prefixes
        (both prefix_frames long). Returns the last future_frames frames of
        the joint decode."""
        pf = self.cfg.prefix_frames
        if executed_prefix.n_frames != pf or generated_prefix.n_frames != pf:
            raise ValueError(f"prefixes must be {pf} frames")
        s_a, _, _ = self.vae.encode(self._normalize(executed_prefix))
        s_g, _, _ = self.vae.encode(self._normalize(generated_prefix))
        s_f = self.sample_future(s_a, command, origin, rng, sampler)
        total = self.cfg.prefix_frames + self.cfg.future_frames
        joint = self.vae.decode(s_g.concat(s_f), total)
        return self._denormalize(MotionClip(joint.frames[pf:].copy()))

    def rollout_future_alone(
        self,
        command: Command,
        executed_prefix: MotionClip,
        origin: Pose2 = Pose2(),
        rng: np.random.Generator | None = None,
        sampler: SamplerConfig | None = None,
    ) -> MotionClip:
        """Ablation path: decode the sampled future tokens without the
        generated-prefix context (used for discontinuity comparisons)."""
        s_a, _, _ = self.vae.encode(self._normalize(executed_prefix))
        s_f = self.sample_future(s_a, command, origin, rng, sampler)
        return self._denormalize(self.vae.decode(s_f, self.cfg.future_frames))

    def stance_prefix(self) -> MotionClip:
        return stance_clip(self.cfg.prefix_frames)
