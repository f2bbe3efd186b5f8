"""Structured executor command: caption, planar location, facing, per-joint
world targets, optional speed, and a per-channel control mask."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

from .geometry import wrap_angle

JOINT_NAMES = ("pelvis", "left_foot", "right_foot", "left_hand", "right_hand", "head")
CONTROL_CHANNEL_NAMES = ("location", "facing", "speed") + JOINT_NAMES


@dataclass(frozen=True)
class Command:
    caption: str
    location: tuple[float, float] | None = None
    facing: float | None = None
    joint_targets: dict[str, tuple[float, float, float]] = field(default_factory=dict)
    speed: float | None = None
    control_mask: frozenset[str] = None  # derived from set fields when None

    def __post_init__(self):
        if not self.caption:
            raise ValueError("command caption must be non-empty")
        for name in self.joint_targets:
            if name not in JOINT_NAMES:
                raise ValueError(f"unknown joint {name!r}")
        if self.facing is not None:
            object.__setattr__(self, "facing", wrap_angle(self.facing))
        if self.control_mask is None:
            mask = set(self.joint_targets)
            if self.location is not None:
                mask.add("location")
            if self.facing is not None:
                mask.add("facing")
            if self.speed is not None:
                mask.add("speed")
            object.__setattr__(self, "control_mask", frozenset(mask))

    def masked(self, channels: set[str]) -> "Command":
        return replace(self, control_mask=frozenset(self.control_mask & channels))

    def digest(self) -> str:
        doc = {
            "caption": self.caption,
            "location": self.location,
            "facing": self.facing,
            "joints": {k: list(v) for k, v in sorted(self.joint_targets.items())},
            "speed": self.speed,
            "mask": sorted(self.control_mask),
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:12]
