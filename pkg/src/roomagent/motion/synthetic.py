"""Procedural kinematic clips for training the desk-scale motion model.

A small deterministic controller produces walk / turn / sit / sleep / touch /
lift / idle phases from a stance start; training samples are token-aligned
windows over those clips, with control channels read off the window itself
(final-frame root pose and joint positions in the window-start frame, mean
moving speed over the future part). The diffusion model distills this
controller's conditional behavior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..geometry import wrap_angle
from .conditioning import ControlValues
from .frames import (
    FPS, JOINTS, N_JOINTS, STANCE_LOCAL, STANCE_ROOT_HEIGHT, MotionClip, Pose2,
    forward_dir, reencode, right_dir, world_joints,
)
from .training import TrainSample

MAX_YAW_RATE = 0.12          # rad/frame, comfortable turn speed
WALK_STEP_FREQ = 1.6         # strides per second
FOOT_SWING = 0.14            # m, forward/back swing amplitude
FOOT_LIFT = 0.04             # m


@dataclass
class _Body:
    pos: np.ndarray
    yaw: float
    joints: np.ndarray  # (J, 3) world
    phase: float = 0.0

    def home_targets(self) -> np.ndarray:
        out = np.zeros((N_JOINTS, 3))
        fwd, rgt = forward_dir(self.yaw), right_dir(self.yaw)
        root = np.array([self.pos[0], self.pos[1], STANCE_ROOT_HEIGHT])
        out[0] = root
        for j, name in enumerate(JOINTS):
            if j == 0:
                continue
            lx, ly, lz = STANCE_LOCAL[name]
            out[j, :2] = self.pos + lx * rgt + lz * fwd
            out[j, 2] = STANCE_ROOT_HEIGHT + ly
        return out


def _start_body() -> _Body:
    body = _Body(pos=np.zeros(2), yaw=0.0, joints=np.zeros((N_JOINTS, 3)))
    body.joints = body.home_targets()
    return body


def _ease(current: np.ndarray, target: np.ndarray, rate: float) -> np.ndarray:
    return current + (target - current) * rate


def _walk_frame(body: _Body, target_xy: np.ndarray, speed: float) -> None:
    to_goal = target_xy - body.pos
    dist = float(np.linalg.norm(to_goal))
    if dist > 0.03:
        desired_yaw = math.atan2(to_goal[1], to_goal[0])
        err = wrap_angle(desired_yaw - body.yaw)
        body.yaw = wrap_angle(body.yaw + float(np.clip(err, -MAX_YAW_RATE, MAX_YAW_RATE)))
        align = max(0.0, math.cos(err))
        step = min(speed / FPS * align, dist)
        body.pos = body.pos + step * forward_dir(body.yaw)
        body.phase += speed * WALK_STEP_FREQ * 2.0 * math.pi / FPS
    targets = body.home_targets()
    if dist > 0.03:
        swing = math.sin(body.phase)
        lift = max(0.0, math.sin(body.phase))
        fwd = forward_dir(body.yaw)
        targets[1, :2] += FOOT_SWING * swing * fwd          # left foot
        targets[1, 2] += FOOT_LIFT * lift
        targets[2, :2] -= FOOT_SWING * swing * fwd          # right foot
        targets[2, 2] += FOOT_LIFT * max(0.0, -math.sin(body.phase))
        targets[3, :2] -= 0.05 * swing * fwd                # arm counter-swing
        targets[4, :2] += 0.05 * swing * fwd
    body.joints = _ease(body.joints, targets, 0.6)


def _turn_frame(body: _Body, target_yaw: float) -> None:
    err = wrap_angle(target_yaw - body.yaw)
    body.yaw = wrap_angle(body.yaw + float(np.clip(err, -MAX_YAW_RATE, MAX_YAW_RATE)))
    body.joints = _ease(body.joints, body.home_targets(), 0.5)


def _idle_frame(body: _Body) -> None:
    body.joints = _ease(body.joints, body.home_targets(), 0.4)


def _pose_frame(body: _Body, overrides: dict[int, np.ndarray], rate: float = 0.18) -> None:
    targets = body.home_targets()
    for j, tgt in overrides.items():
        targets[j] = tgt
    if 0 in overrides:
        # pelvis carries the frame origin; head rides along unless overridden
        if 5 not in overrides:
            targets[5] = overrides[0] + np.array([0.0, 0.0, 0.65])
    body.joints = _ease(body.joints, targets, rate)
    body.pos = body.joints[0, :2].copy()


def _sleep_frame(body: _Body, pelvis_tgt: np.ndarray, lie_dir: np.ndarray) -> None:
    head = pelvis_tgt + 0.62 * np.array([lie_dir[0], lie_dir[1], 0.0])
    lfoot = pelvis_tgt - 0.85 * np.array([lie_dir[0], lie_dir[1], 0.0])
    rfoot = lfoot + 0.18 * np.array([lie_dir[1], -lie_dir[0], 0.0])
    lhand = pelvis_tgt + 0.3 * np.array([lie_dir[1], -lie_dir[0], 0.0])
    rhand = pelvis_tgt - 0.3 * np.array([lie_dir[1], -lie_dir[0], 0.0])
    _pose_frame(body, {0: pelvis_tgt, 1: lfoot, 2: rfoot, 3: lhand, 4: rhand, 5: head},
                rate=0.15)


def _shuffle_frame(body: _Body, target_xy: np.ndarray) -> None:
    """Small positional adjustment at a fixed facing (side/back stepping)."""
    to_goal = target_xy - body.pos
    dist = float(np.linalg.norm(to_goal))
    if dist > 0.01:
        step = min(0.3 / FPS, dist)
        body.pos = body.pos + to_goal / dist * step
    body.joints = _ease(body.joints, body.home_targets(), 0.5)


def run_controller(phases: list[tuple], n_stance: int = 20,
                   return_spans: bool = False):
    """Simulate controller phases after n_stance standing frames.

    Phase forms: ("walk", n, target_xy, speed), ("turn", n, yaw),
    ("sit", n, pelvis_xyz), ("sleep", n, pelvis_xyz, lie_dir),
    ("touch", n, joint_index, xyz), ("lift", n, joint_index, xyz_low, xyz_high),
    ("shuffle", n, target_xy), ("idle", n).

    With return_spans, also gives [(start_frame, end_frame, kind)] so callers
    can label windows by the phase that owns them.
    """
    body = _start_body()
    frames_w = []
    yaws = []

    def record():
        frames_w.append(body.joints.copy())
        yaws.append(body.yaw)

    spans = [(0, n_stance, "idle")]
    for _ in range(n_stance):
        record()
    for phase in phases:
        kind, n = phase[0], phase[1]
        spans.append((len(frames_w), len(frames_w) + n, kind))
        for i in range(n):
            if kind == "walk":
                _walk_frame(body, np.asarray(phase[2], float), float(phase[3]))
            elif kind == "turn":
                _turn_frame(body, float(phase[2]))
            elif kind == "sit":
                _pose_frame(body, {0: np.asarray(phase[2], float)})
            elif kind == "shuffle":
                _shuffle_frame(body, np.asarray(phase[2], float))
            elif kind == "sleep":
                _sleep_frame(body, np.asarray(phase[2], float), np.asarray(phase[3], float))
            elif kind == "touch":
                _pose_frame(body, {int(phase[2]): np.asarray(phase[3], float)}, rate=0.25)
            elif kind == "lift":
                midpoint = n // 2
                tgt = np.asarray(phase[3] if i < midpoint else phase[4], float)
                _pose_frame(body, {int(phase[2]): tgt}, rate=0.25)
            elif kind == "idle":
                _idle_frame(body)
            else:
                raise ValueError(f"unknown phase kind {kind!r}")
            record()
    clip = reencode(np.stack(frames_w), np.asarray(yaws))
    if return_spans:
        return clip, spans
    return clip


def extract_controls(window: MotionClip, prefix_frames: int) -> ControlValues:
    """Control channels in the window-start frame: final-frame root location &
    facing, mean future moving speed, final-frame joint positions."""
    joints = world_joints(window, Pose2())
    fr = window.frames
    yaw = np.cumsum(np.concatenate([[0.0], fr[:-1, 0]]))
    final = window.n_frames - 1
    vel = fr[prefix_frames:, 1:3]
    speed = float(np.mean(np.linalg.norm(vel, axis=1)) * FPS)
    return ControlValues(
        location=(float(joints[final, 0, 0]), float(joints[final, 0, 1])),
        facing=float(wrap_angle(yaw[final])),
        speed=speed,
        joints={
            name: tuple(float(x) for x in joints[final, j])
            for j, name in enumerate(JOINTS)
        },
    )


_NOUNS = (
    "sofa1", "bed1", "chair2", "lamp1", "trinket1", "bookstack1", "monitor1",
    "tv1", "desk1", "plantcontainer1", "box1", "bench2", "shelf1", "cup1",
)

_TOUCH_VERBS = ("Touching", "Grabbing", "Turn on", "Pressing")


def _windows(clip: MotionClip, window_len: int, stride: int) -> list[MotionClip]:
    out = []
    start = 0
    while start + window_len <= clip.n_frames:
        out.append(clip.slice(start, start + window_len))
        start += stride
    return out


_KIND_WEIGHTS = (
    ("walk", 2.0), ("turn", 1.0), ("sit_near", 2.0), ("sit_far", 1.0),
    ("sleep_near", 2.0), ("sleep_far", 1.0), ("touch", 2.0), ("lift", 2.0),
    ("idle", 0.5), ("watch", 1.0), ("walk_touch", 1.0), ("turn_walk", 1.0),
)

# caption templates per controller phase kind; interaction phases use the
# episode's own caption
_PHASE_CAPTIONS = {
    "walk": "A person is walking.",
    "turn": "A person is slowly turning around in place.",
    "idle": "Standing.",
}


def _window_caption(spans, start, window_len, own_caption, rng) -> str:
    """Caption of the phase owning the majority of the window's future part."""
    futures = range(start + 20, start + window_len)
    votes: dict[str, int] = {}
    for s, e, kind in spans:
        overlap = max(0, min(e, futures.stop) - max(s, futures.start))
        if overlap:
            votes[kind] = votes.get(kind, 0) + overlap
    owner = max(votes, key=votes.get)
    if owner == "idle":
        # watching/standing episodes keep their own caption while idle
        return own_caption or _PHASE_CAPTIONS["idle"]
    if owner in _PHASE_CAPTIONS:
        return _PHASE_CAPTIONS[owner]
    return own_caption   # interaction phases (incl. shuffle) own the caption


def build_dataset(
    n_episodes: int,
    seed: int,
    prefix_frames: int = 20,
    future_frames: int = 40,
) -> list[TrainSample]:
    """Randomized controller episodes cut into training windows; each window
    is captioned by the phase its future mostly covers, so interaction
    captions pair with actual interaction motion."""
    rng = np.random.default_rng(seed)
    window_len = prefix_frames + future_frames
    kinds = [k for k, _ in _KIND_WEIGHTS]
    weights = np.array([w for _, w in _KIND_WEIGHTS])
    weights = weights / weights.sum()
    samples: list[TrainSample] = []
    for _ in range(n_episodes):
        kind = str(rng.choice(kinds, p=weights))
        noun = str(rng.choice(_NOUNS))
        caption = ""
        if kind == "walk":
            ang = rng.uniform(-math.pi, math.pi)
            dist = rng.uniform(0.6, 3.2)
            speed = rng.uniform(0.35, 1.0)
            target = dist * np.array([math.cos(ang), math.sin(ang)])
            phases = [("walk", 80, target, speed)]
        elif kind == "turn":
            yaw = rng.uniform(-math.pi, math.pi)
            phases = [("turn", 60, yaw), ("idle", 20)]
        elif kind in ("sit_near", "sit_far"):
            # (walk in), turn away, back up to the seat edge, sit down
            ang = rng.uniform(-math.pi, math.pi)
            stand = rng.uniform(0.8, 2.2) * np.array([math.cos(ang), math.sin(ang)])
            back_dir = stand / np.linalg.norm(stand)   # seat behind the stand point
            away = math.atan2(-back_dir[1], -back_dir[0])
            if kind == "sit_near":
                stand = np.zeros(2)
                back_dir = np.array([math.cos(ang), math.sin(ang)])
                away = math.atan2(-back_dir[1], -back_dir[0])
            shuffle_to = stand + back_dir * rng.uniform(0.1, 0.3)
            seat = np.append(stand + back_dir * rng.uniform(0.3, 0.6),
                             rng.uniform(0.38, 0.55))
            phases = []
            if kind == "sit_far":
                phases.append(("walk", 50, stand, rng.uniform(0.5, 1.0)))
            phases += [
                ("turn", 30, away),
                ("shuffle", 20, shuffle_to),
                ("sit", 50, seat),
            ]
            caption = f"Sitting on {noun}."
        elif kind in ("sleep_near", "sleep_far"):
            ang = rng.uniform(-math.pi, math.pi)
            stand = rng.uniform(0.8, 2.0) * np.array([math.cos(ang), math.sin(ang)])
            back_dir = stand / np.linalg.norm(stand)
            if kind == "sleep_near":
                stand = np.zeros(2)
                back_dir = np.array([math.cos(ang), math.sin(ang)])
            away = math.atan2(-back_dir[1], -back_dir[0])
            pelvis = np.append(stand + back_dir * rng.uniform(0.5, 1.2),
                               rng.uniform(0.45, 0.65))
            phases = []
            if kind == "sleep_far":
                phases.append(("walk", 45, stand, rng.uniform(0.5, 1.0)))
            phases += [
                ("turn", 30, away),
                ("shuffle", 15, stand + back_dir * 0.15),
                ("sleep", 55, pelvis, back_dir),
            ]
            caption = f"Sleeping on {noun}."
        elif kind == "touch":
            j = int(rng.choice([3, 4]))
            tgt = np.array([
                rng.uniform(0.25, 0.6), rng.uniform(-0.35, 0.35), rng.uniform(0.5, 1.4),
            ])
            phases = [("touch", 60, j, tgt)]
            caption = f"{rng.choice(_TOUCH_VERBS)} {noun}."
        elif kind == "lift":
            j = int(rng.choice([3, 4]))
            low = np.array([rng.uniform(0.3, 0.55), rng.uniform(-0.25, 0.25),
                            rng.uniform(0.2, 0.5)])
            high = low + np.array([0.0, 0.0, rng.uniform(0.4, 0.6)])
            phases = [("lift", 70, j, low, high)]
            caption = f"Lifting {noun}."
        elif kind == "idle":
            phases = [("idle", 60)]
        elif kind == "watch":
            yaw = rng.uniform(-math.pi, math.pi)
            phases = [("turn", 35, yaw), ("idle", 45)]
            caption = f"Watching {noun}."
        elif kind == "walk_touch":
            target = np.array([rng.uniform(0.8, 2.0), rng.uniform(-0.8, 0.8)])
            j = int(rng.choice([3, 4]))
            hand = np.append(target + rng.uniform(0.2, 0.4, size=2), rng.uniform(0.6, 1.2))
            phases = [("walk", 60, target, rng.uniform(0.5, 1.0)), ("touch", 40, j, hand)]
            caption = f"{rng.choice(_TOUCH_VERBS)} {noun}."
        else:  # turn_walk
            yaw = rng.uniform(-math.pi, math.pi)
            target = rng.uniform(1.0, 2.5) * np.array([math.cos(yaw), math.sin(yaw)])
            phases = [("turn", 30, yaw), ("walk", 70, target, rng.uniform(0.5, 1.0))]
        episode, spans = run_controller(phases, return_spans=True)
        start = 0
        while start + window_len <= episode.n_frames:
            window = episode.slice(start, start + window_len)
            samples.append(
                TrainSample(
                    clip=window,
                    caption=_window_caption(spans, start, window_len, caption, rng),
                    controls=extract_controls(window, prefix_frames),
                )
            )
            start += 20
    return samples
