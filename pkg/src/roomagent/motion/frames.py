"""Redundant per-frame motion representation and its kinematics.

Each frame packs, in order: root yaw rate (rad/frame), root planar velocity in
the root frame (m/frame, lateral then forward), root height (m), local joint
positions for the non-root joints (right/up/forward relative to the root),
6-component joint rotations, per-joint velocities in the root frame (root
included), and four binary foot-contact flags. For J joints the frame width is
D = 12J - 1 (J=22 -> 263, J=6 -> 71). Clips are sampled at 20 fps.

World frame: ground plane XY, height Z. The representation's own height axis
is the local "up" component. Root integration: frame n's velocities move the
root from pose n to pose n+1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FPS = 20
FRAME_DT = 1.0 / FPS

JOINTS = ("pelvis", "left_foot", "right_foot", "left_hand", "right_hand", "head")
N_JOINTS = len(JOINTS)

# standing pose, local (right, up-relative-to-root, forward) offsets in meters
STANCE_ROOT_HEIGHT = 0.90
STANCE_LOCAL = {
    "pelvis": (0.0, 0.0, 0.0),
    "left_foot": (-0.10, -0.90, 0.0),
    "right_foot": (0.10, -0.90, 0.0),
    "left_hand": (-0.30, -0.25, 0.05),
    "right_hand": (0.30, -0.25, 0.05),
    "head": (0.0, 0.65, 0.0),
}
IDENTITY_ROT6 = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def frame_dim(n_joints: int = N_JOINTS) -> int:
    return 12 * n_joints - 1


@dataclass(frozen=True)
class Layout:
    """Channel offsets inside a frame vector for a J-joint skeleton."""

    n_joints: int = N_JOINTS

    @property
    def dim(self) -> int:
        return frame_dim(self.n_joints)

    root_yaw_rate = 0
    root_vel_x = 1
    root_vel_z = 2
    root_height = 3

    @property
    def jp_start(self) -> int:
        return 4

    @property
    def jr_start(self) -> int:
        return 4 + 3 * (self.n_joints - 1)

    @property
    def jv_start(self) -> int:
        return self.jr_start + 6 * (self.n_joints - 1)

    @property
    def contacts_start(self) -> int:
        return self.jv_start + 3 * self.n_joints

    def jp_slice(self, joint_index: int) -> slice:
        if joint_index < 1:
            raise ValueError("joint 0 is the root; it has no local position")
        s = self.jp_start + 3 * (joint_index - 1)
        return slice(s, s + 3)

    def jv_slice(self, joint_index: int) -> slice:
        s = self.jv_start + 3 * joint_index
        return slice(s, s + 3)


LAYOUT = Layout()


@dataclass
class MotionClip:
    frames: np.ndarray  # (F, D)
    fps: int = FPS

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("frames must be a non-empty FxD matrix")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def copy(self) -> "MotionClip":
        return MotionClip(self.frames.copy(), self.fps)

    def slice(self, start: int, stop: int) -> "MotionClip":
        return MotionClip(self.frames[start:stop].copy(), self.fps)

    def concat(self, other: "MotionClip") -> "MotionClip":
        return MotionClip(np.concatenate([self.frames, other.frames]), self.fps)


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    facing: float = 0.0

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


def forward_dir(facing: float) -> np.ndarray:
    return np.array([math.cos(facing), math.sin(facing)])


def right_dir(facing: float) -> np.ndarray:
    return np.array([math.sin(facing), -math.cos(facing)])


def stance_frame() -> np.ndarray:
    f = np.zeros(LAYOUT.dim)
    f[LAYOUT.root_height] = STANCE_ROOT_HEIGHT
    for j, name in enumerate(JOINTS):
        if j >= 1:
            f[LAYOUT.jp_slice(j)] = STANCE_LOCAL[name]
            s = LAYOUT.jr_start + 6 * (j - 1)
            f[s:s + 6] = IDENTITY_ROT6
    f[LAYOUT.contacts_start:LAYOUT.contacts_start + 4] = 1.0
    return f


def stance_clip(n_frames: int) -> MotionClip:
    return MotionClip(np.tile(stance_frame(), (n_frames, 1)))


def integrate_root(clip: MotionClip, origin: Pose2 = Pose2()) -> tuple[np.ndarray, np.ndarray]:
    """World root XY positions (F, 2) and facing angles (F,), clip frame 0
    anchored at `origin`."""
    fr = clip.frames
    n = clip.n_frames
    pos = np.zeros((n, 2))
    yaw = np.zeros(n)
    pos[0] = origin.xy
    yaw[0] = origin.facing
    for i in range(n - 1):
        vx, vz = fr[i, LAYOUT.root_vel_x], fr[i, LAYOUT.root_vel_z]
        pos[i + 1] = pos[i] + vx * right_dir(yaw[i]) + vz * forward_dir(yaw[i])
        yaw[i + 1] = yaw[i] + fr[i, LAYOUT.root_yaw_rate]
    return pos, yaw


def world_joints(clip: MotionClip, origin: Pose2 = Pose2()) -> np.ndarray:
    """World positions of every joint, shape (F, J, 3)."""
    fr = clip.frames
    pos, yaw = integrate_root(clip, origin)
    n = clip.n_frames
    out = np.zeros((n, N_JOINTS, 3))
    for i in range(n):
        fwd, rgt = forward_dir(yaw[i]), right_dir(yaw[i])
        root_h = fr[i, LAYOUT.root_height]
        out[i, 0, :2] = pos[i]
        out[i, 0, 2] = root_h
        for j in range(1, N_JOINTS):
            lx, ly, lz = fr[i, LAYOUT.jp_slice(j)]
            out[i, j, :2] = pos[i] + lx * rgt + lz * fwd
            out[i, j, 2] = root_h + ly
    return out


def reencode(
    joints_world: np.ndarray,
    yaw: np.ndarray,
    rotations_from: MotionClip | None = None,
) -> MotionClip:
    """Rebuild the frame matrix from world joint positions and a facing
    sequence (the inverse of world_joints up to velocity conventions). Joint
    rotations are copied from `rotations_from` when given, identity otherwise.
    Foot contacts use a low-and-slow heuristic."""
    n = joints_world.shape[0]
    fr = np.zeros((n, LAYOUT.dim))
    for i in range(n):
        fwd, rgt = forward_dir(yaw[i]), right_dir(yaw[i])
        root = joints_world[i, 0]
        nxt = joints_world[min(i + 1, n - 1), 0]
        if i < n - 1:
            fr[i, LAYOUT.root_yaw_rate] = yaw[i + 1] - yaw[i]
            delta = nxt[:2] - root[:2]
            fr[i, LAYOUT.root_vel_x] = float(delta @ rgt)
            fr[i, LAYOUT.root_vel_z] = float(delta @ fwd)
        elif n >= 2:
            fr[i, LAYOUT.root_yaw_rate] = fr[i - 1, LAYOUT.root_yaw_rate]
            fr[i, LAYOUT.root_vel_x] = fr[i - 1, LAYOUT.root_vel_x]
            fr[i, LAYOUT.root_vel_z] = fr[i - 1, LAYOUT.root_vel_z]
        fr[i, LAYOUT.root_height] = root[2]
        for j in range(1, N_JOINTS):
            rel = joints_world[i, j] - root
            fr[i, LAYOUT.jp_slice(j)] = (
                float(rel[:2] @ rgt), rel[2], float(rel[:2] @ fwd)
            )
        for j in range(N_JOINTS):
            nxt_j = joints_world[min(i + 1, n - 1), j]
            vel = nxt_j - joints_world[i, j] if i < n - 1 else np.zeros(3)
            fr[i, LAYOUT.jv_slice(j)] = (
                float(vel[:2] @ rgt), vel[2], float(vel[:2] @ fwd)
            )
        if rotations_from is not None:
            src = rotations_from.frames[min(i, rotations_from.n_frames - 1)]
            fr[i, LAYOUT.jr_start:LAYOUT.jv_start] = src[LAYOUT.jr_start:LAYOUT.jv_start]
        else:
            for j in range(1, N_JOINTS):
                s = LAYOUT.jr_start + 6 * (j - 1)
                fr[i, s:s + 6] = IDENTITY_ROT6
        for foot_flag, j in ((0, 1), (1, 1), (2, 2), (3, 2)):
            z = joints_world[i, j, 2]
            speed = np.linalg.norm(fr[i, LAYOUT.jv_slice(j)])
            fr[i, LAYOUT.contacts_start + foot_flag] = float(z < 0.08 and speed < 0.03)
    return MotionClip(fr)


def joint_index(name: str) -> int:
    try:
        return JOINTS.index(name)
    except ValueError:
        raise KeyError(f"unknown joint {name!r}") from None
