"""Arm-chain inverse kinematics: a two-segment FABRIK variant.

The chain is shoulder-elbow-wrist with the shoulder as fixed root; the solve
target is the wrist, and the hand is reconstructed afterwards at a fixed
offset along the forearm. Out-of-reach targets fully extend the chain toward
the target. Iteration is capped at 50 passes with a 1e-3 m wrist tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import unit
from .motion.frames import (
    JOINTS, LAYOUT, MotionClip, Pose2, forward_dir, integrate_root, right_dir,
)

MAX_ITERATIONS = 50
WRIST_TOLERANCE = 1e-3


@dataclass(frozen=True)
class ArmChain:
    shoulder: np.ndarray
    elbow: np.ndarray
    wrist: np.ndarray
    upper_len: float
    fore_len: float
    hand_offset: float = 0.08

    def __post_init__(self):
        object.__setattr__(self, "shoulder", np.asarray(self.shoulder, float))
        object.__setattr__(self, "elbow", np.asarray(self.elbow, float))
        object.__setattr__(self, "wrist", np.asarray(self.wrist, float))
        if self.upper_len <= 0 or self.fore_len <= 0:
            raise ValueError("segment lengths must be positive")

    @staticmethod
    def from_points(shoulder, elbow, wrist, hand_offset: float = 0.08) -> "ArmChain":
        shoulder = np.asarray(shoulder, float)
        elbow = np.asarray(elbow, float)
        wrist = np.asarray(wrist, float)
        return ArmChain(
            shoulder, elbow, wrist,
            upper_len=float(np.linalg.norm(elbow - shoulder)),
            fore_len=float(np.linalg.norm(wrist - elbow)),
            hand_offset=hand_offset,
        )


def solve(chain: ArmChain, target) -> ArmChain:
    """Move the wrist to `target`, preserving both segment lengths."""
    target = np.asarray(target, float)
    shoulder = chain.shoulder.copy()
    reach = chain.upper_len + chain.fore_len
    to_target = target - shoulder
    dist = float(np.linalg.norm(to_target))
    if dist >= reach:
        # fully extended and pointed towards the target
        direction = unit(to_target) if dist > 0 else np.array([1.0, 0.0, 0.0])
        elbow = shoulder + chain.upper_len * direction
        wrist = shoulder + reach * direction
        return replace(chain, elbow=elbow, wrist=wrist)

    elbow = chain.elbow.copy()
    wrist = chain.wrist.copy()
    # degenerate start: elbow collinear or coincident breaks the projections
    if np.linalg.norm(elbow - shoulder) < 1e-9 or np.linalg.norm(wrist - elbow) < 1e-9:
        seed = unit(to_target) if dist > 1e-9 else np.array([1.0, 0.0, 0.0])
        elbow = shoulder + chain.upper_len * seed + np.array([0.0, 0.0, 1e-6])
        wrist = elbow + chain.fore_len * seed

    # The two-link iteration stays in the plane spanned by the target axis and
    # the initial elbow offset, so the elbow state reduces to one angle theta
    # measured from the axis. Plain backward/forward passes converge fast for
    # ordinary targets but only creep for near-folded ones (the map approaches
    # an isometry at the inner workspace boundary), so after a few passes the
    # solver falls back to bracketing the elbow angle: the wrist gap
    # |target - elbow(theta)| - fore_len is monotone in theta on [0, pi],
    # and each probe is the same geometric construction as a FABRIK pass.
    axis = unit(to_target) if dist > 1e-9 else np.array([1.0, 0.0, 0.0])
    lateral = (elbow - shoulder) - float((elbow - shoulder) @ axis) * axis
    if np.linalg.norm(lateral) < 1e-9:
        lateral = np.cross(axis, np.array([0.0, 0.0, 1.0]))
        if np.linalg.norm(lateral) < 1e-9:
            lateral = np.cross(axis, np.array([0.0, 1.0, 0.0]))
    plane = unit(lateral)

    def at_angle(theta: float) -> np.ndarray:
        return shoulder + chain.upper_len * (
            math.cos(theta) * axis + math.sin(theta) * plane
        )

    def wrist_gap(theta: float) -> float:
        return float(np.linalg.norm(target - at_angle(theta))) - chain.fore_len

    iterations = 0
    for _ in range(4):
        if np.linalg.norm(wrist - target) < WRIST_TOLERANCE:
            break
        iterations += 1
        # backward pass: pin wrist to target, walk toward the root
        wrist = target.copy()
        elbow = wrist + chain.fore_len * unit(elbow - wrist)
        # forward pass: pin shoulder, walk back out
        elbow = shoulder + chain.upper_len * unit(elbow - shoulder)
        wrist = elbow + chain.fore_len * unit(target - elbow)

    if np.linalg.norm(wrist - target) >= WRIST_TOLERANCE:
        off = elbow - shoulder
        side = math.copysign(1.0, float(off @ plane)) or 1.0
        lo_t, hi_t = 0.0, math.pi
        for _ in range(MAX_ITERATIONS - iterations):
            mid = 0.5 * (lo_t + hi_t)
            elbow = at_angle(side * mid)
            wrist = elbow + chain.fore_len * unit(target - elbow)
            if np.linalg.norm(wrist - target) < WRIST_TOLERANCE:
                break
            if wrist_gap(side * mid) > 0.0:
                hi_t = mid
            else:
                lo_t = mid
    return replace(chain, shoulder=shoulder, elbow=elbow, wrist=wrist)


def place_hand(chain: ArmChain) -> np.ndarray:
    """Hand point at the fixed offset beyond the wrist, along the forearm."""
    return chain.wrist + chain.hand_offset * unit(chain.wrist - chain.elbow)


@dataclass(frozen=True)
class ArmDescriptor:
    """Where an arm chain attaches to the skeleton, in root-local coordinates
    (right, up-relative-to-root, forward)."""

    shoulder_local: tuple[float, float, float]
    upper_len: float = 0.30
    fore_len: float = 0.28
    hand_offset: float = 0.08


SKELETON_ARMS = {
    "left_hand": ArmDescriptor(shoulder_local=(-0.18, 0.45, 0.0)),
    "right_hand": ArmDescriptor(shoulder_local=(0.18, 0.45, 0.0)),
}


def _shoulder_world(desc: ArmDescriptor, root_xy, root_h, yaw) -> np.ndarray:
    fwd, rgt = forward_dir(yaw), right_dir(yaw)
    lx, ly, lz = desc.shoulder_local
    xy = root_xy + lx * rgt + lz * fwd
    return np.array([xy[0], xy[1], root_h + ly])


def apply_to_clip(
    clip: MotionClip,
    joint_targets: dict[str, tuple[float, float, float]],
    arms: dict[str, ArmDescriptor] | None = None,
    origin: Pose2 = Pose2(),
) -> MotionClip:
    """Per frame, re-solve each targeted hand's arm chain toward its world
    target and rewrite that hand's local position (velocities recomputed by
    finite difference). Non-hand channels are untouched. Solves are seeded
    from the previous frame's solution for temporal coherence.
    """
    if not joint_targets:
        return clip
    arms = arms or SKELETON_ARMS
    for name in joint_targets:
        if name not in arms:
            raise KeyError(f"no arm chain for joint {name!r}")
    out = clip.copy()
    pos, yaw = integrate_root(out, origin)
    chains: dict[str, ArmChain] = {}
    hand_world = {name: np.zeros((out.n_frames, 3)) for name in joint_targets}

    for i in range(out.n_frames):
        fwd, rgt = forward_dir(yaw[i]), right_dir(yaw[i])
        root_h = out.frames[i, LAYOUT.root_height]
        for name, target in joint_targets.items():
            desc = arms[name]
            shoulder = _shoulder_world(desc, pos[i], root_h, yaw[i])
            if name in chains:
                prev = chains[name]
                chain = ArmChain(
                    shoulder, shoulder + (prev.elbow - prev.shoulder),
                    shoulder + (prev.wrist - prev.shoulder),
                    desc.upper_len, desc.fore_len, desc.hand_offset,
                )
            else:
                j = JOINTS.index(name)
                lx, ly, lz = out.frames[i, LAYOUT.jp_slice(j)]
                hand0 = np.array([
                    pos[i][0] + lx * rgt[0] + lz * fwd[0],
                    pos[i][1] + lx * rgt[1] + lz * fwd[1],
                    root_h + ly,
                ])
                wrist0 = hand0 - desc.hand_offset * unit(hand0 - shoulder)
                mid = 0.5 * (shoulder + wrist0) + np.array([0.0, 0.0, -0.02])
                chain = ArmChain(shoulder, mid, wrist0,
                                 desc.upper_len, desc.fore_len, desc.hand_offset)
            hand_target = np.asarray(target, float)
            # the IK target is the wrist; shift it by the hand-offset residual
            # until the reconstructed hand lands on the commanded point
            approach = hand_target - shoulder
            if np.linalg.norm(approach) > 1e-9:
                wrist_target = hand_target - desc.hand_offset * unit(approach)
            else:
                wrist_target = hand_target.copy()
            for _ in range(5):
                chain = solve(chain, wrist_target)
                err = hand_target - place_hand(chain)
                if np.linalg.norm(err) < WRIST_TOLERANCE:
                    break
                wrist_target = wrist_target + err
            chains[name] = chain
            hand_world[name][i] = place_hand(chain)

    for name, world in hand_world.items():
        j = JOINTS.index(name)
        for i in range(out.n_frames):
            fwd, rgt = forward_dir(yaw[i]), right_dir(yaw[i])
            rel_xy = world[i, :2] - pos[i]
            out.frames[i, LAYOUT.jp_slice(j)] = (
                float(rel_xy @ rgt),
                world[i, 2] - out.frames[i, LAYOUT.root_height],
                float(rel_xy @ fwd),
            )
        for i in range(out.n_frames):
            nxt = world[min(i + 1, out.n_frames - 1)]
            vel = nxt - world[i] if i < out.n_frames - 1 else np.zeros(3)
            fwd, rgt = forward_dir(yaw[i]), right_dir(yaw[i])
            out.frames[i, LAYOUT.jv_slice(j)] = (
                float(vel[:2] @ rgt), vel[2], float(vel[:2] @ fwd)
            )
    return out
