"""Caption and control-channel conditioning tokens.

Captions go through a deterministic hashing embedder (each lowercase token
hashed into a signed bin), L2-normalized; the empty string maps to the zero
vector and doubles as the unconditional caption token. Control channels pass
through per-channel two-layer perceptrons and are summed; masked channels
contribute exactly zero, so fully-masked controls equal the unconditional
control token. Facing enters as sine-cosine, making the encoding 2pi-periodic.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .nn import Linear, Module

_TOKEN_RE = re.compile(r"[a-z0-9]+")

# channel name -> input width; order fixed (it is the control_mask order)
CONTROL_CHANNELS = (
    ("location", 2),
    ("facing", 2),
    ("speed", 1),
    ("pelvis", 3),
    ("left_foot", 3),
    ("right_foot", 3),
    ("left_hand", 3),
    ("right_hand", 3),
    ("head", 3),
)
CHANNEL_NAMES = tuple(name for name, _ in CONTROL_CHANNELS)


def embed_caption(text: str, dim: int = 64) -> np.ndarray:
    """Hash words into +-1 bins of an H-vector, L2-normalized; '' -> zeros."""
    vec = np.zeros(dim)
    for token in _TOKEN_RE.findall(text.lower()):
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        idx = int.from_bytes(digest[:4], "little") % dim
        sign = 1.0 if digest[4] & 1 else -1.0
        vec[idx] += sign
    norm = float(np.linalg.norm(vec))
    if norm > 0:
        vec /= norm
    return vec


@dataclass
class ControlValues:
    """Raw control-channel values in the motion's local frame plus a mask."""

    location: tuple[float, float] | None = None
    facing: float | None = None
    speed: float | None = None
    joints: dict[str, tuple[float, float, float]] = field(default_factory=dict)

    def channel_vector(self, name: str) -> np.ndarray | None:
        if name == "location":
            return None if self.location is None else np.asarray(self.location, float)
        if name == "facing":
            if self.facing is None:
                return None
            return np.array([math.sin(self.facing), math.cos(self.facing)])
        if name == "speed":
            return None if self.speed is None else np.array([self.speed], float)
        if name in self.joints:
            return np.asarray(self.joints[name], float)
        return None

    def mask(self) -> dict[str, bool]:
        return {name: self.channel_vector(name) is not None for name in CHANNEL_NAMES}


class ControlEncoder(Module):
    """Per-channel 2-layer perceptrons summed into the control token s_c."""

    def __init__(self, latent_dim: int, rng: np.random.Generator, hidden: int = 32):
        self.latent_dim = latent_dim
        self.mlps = []
        self._channel_index = {}
        for i, (name, width) in enumerate(CONTROL_CHANNELS):
            lin1 = Linear(width, hidden, rng)
            lin2 = Linear(hidden, latent_dim, rng)
            self.mlps.append((lin1, lin2))
            self._channel_index[name] = i
        # expose submodules for parameter collection
        for i, (l1, l2) in enumerate(self.mlps):
            setattr(self, f"ch{i}_lin1", l1)
            setattr(self, f"ch{i}_lin2", l2)

    def __call__(self, controls: ControlValues) -> Tensor:
        total = Tensor(np.zeros((1, self.latent_dim)))
        for name, _ in CONTROL_CHANNELS:
            vec = controls.channel_vector(name)
            if vec is None:
                continue
            lin1, lin2 = self.mlps[self._channel_index[name]]
            total = total + lin2(lin1(Tensor(vec.reshape(1, -1))).gelu())
        return total.reshape(self.latent_dim)

    def encode(self, controls: ControlValues) -> np.ndarray:
        with no_grad():
            return self(controls).data


@dataclass
class ConditionTokens:
    caption_token: np.ndarray        # s_m, unit-normalized or zero
    control_token: np.ndarray        # s_c
    control_mask: dict[str, bool] = field(default_factory=dict)
