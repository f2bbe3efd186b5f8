"""Task success criteria, splice-discontinuity metric, and control error.

Success comparisons (documented sharp boundaries):
  reach  - planar distance to goal location <= 0.5 m
  watch  - in the front half-plane of the target AND facing error < pi/6
  sit    - pelvis within 0.1 m of the seat surface AND upward force AND
           torso-forward error < pi/4
  sleep  - pelvis, head, hands, feet within 0.1 m of the sleep surface AND
           mean contact force pointing up AND torso within pi/4 of horizontal
  touch  - the designated hand within 0.1 m of the target point AND force
  lift   - object center > 0.25 m above the ground

A task succeeds when some criterion holds for more than 30 consecutive
frames (strictly more).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import angle_diff, wrap_angle
from .motion.frames import FPS, JOINTS, MotionClip, Pose2, world_joints
from .scene import SceneModel
from .sim import SimFrame, is_force_applied, role_surface_distance, surface_distance

SUSTAIN_FRAMES = 30          # success needs > this many consecutive frames
REACH_RADIUS = 0.5
WATCH_MAX_ANGLE = math.pi / 6
NEAR_SURFACE = 0.1
TORSO_MAX_ANGLE = math.pi / 4
LIFT_HEIGHT = 0.25


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class FrameGoal:
    """Resolved per-task context needed to judge a single frame."""

    kind: str
    target_id: str | None = None
    location: tuple[float, float] | None = None
    hand: str = "right_hand"
    surface_ref: str | None = None       # object carrying the seat/sleep surface
    forward_ref: float | None = None     # reference yaw for torso-forward checks


@dataclass
class CriterionResult:
    task_id: str
    satisfied: list[bool]
    success: bool = field(init=False)
    sustained_len: int = field(init=False)
    frames_to_success: int = field(init=False)

    def __post_init__(self):
        best = 0
        run = 0
        first_success = -1
        for i, ok in enumerate(self.satisfied):
            run = run + 1 if ok else 0
            if run > best:
                best = run
            if run > SUSTAIN_FRAMES and first_success < 0:
                first_success = i
        self.sustained_len = best
        self.success = best > SUSTAIN_FRAMES
        self.frames_to_success = first_success


def _torso_axis(joints: np.ndarray) -> np.ndarray:
    return joints[JOINTS.index("head")] - joints[JOINTS.index("pelvis")]


def check_frame(
    goal: FrameGoal,
    scene: SceneModel,
    sim_frame: SimFrame,
    agent_pose: Pose2,
) -> bool:
    """Judge one frame against the goal's criterion."""
    kind = goal.kind
    joints = sim_frame.joints
    if kind == "reach":
        if goal.location is None:
            raise EvaluationError("reach goal needs a location")
        d = math.hypot(agent_pose.x - goal.location[0], agent_pose.y - goal.location[1])
        return d <= REACH_RADIUS

    if kind == "watch":
        obj = scene.get(goal.target_id)
        if obj.front_direction is None:
            raise EvaluationError(f"{obj.id} has no front direction")
        front = np.asarray(obj.front_direction)
        to_agent = np.array([agent_pose.x - obj.position[0], agent_pose.y - obj.position[1]])
        in_front = float(to_agent @ front) > 0.0
        look_dir = math.atan2(obj.position[1] - agent_pose.y, obj.position[0] - agent_pose.x)
        return in_front and abs(angle_diff(agent_pose.facing, look_dir)) < WATCH_MAX_ANGLE

    if kind == "sit":
        ref = goal.surface_ref or goal.target_id
        pelvis = joints[JOINTS.index("pelvis")]
        near = role_surface_distance(
            scene, ref, "seat", pelvis, sim_frame.object_positions
        ) <= NEAR_SURFACE
        forced, direction = is_force_applied(sim_frame.contacts, "pelvis")
        upward = forced and direction is not None and direction[2] > 0.0
        if goal.forward_ref is None:
            torso_ok = True
        else:
            torso_ok = abs(angle_diff(agent_pose.facing, goal.forward_ref)) < TORSO_MAX_ANGLE
        return near and upward and torso_ok

    if kind == "sleep":
        ref = goal.surface_ref or goal.target_id
        body = ("pelvis", "head", "left_hand", "right_hand", "left_foot", "right_foot")
        near = all(
            role_surface_distance(
                scene, ref, "sleep", joints[JOINTS.index(j)], sim_frame.object_positions
            ) <= NEAR_SURFACE
            for j in body
        )
        normals = [
            np.asarray(ev.normal)
            for ev in sim_frame.contacts
            if float(np.dot(ev.intent, ev.normal)) < -1e-9
        ]
        avg_up = bool(normals) and float(np.mean([n[2] for n in normals])) > 0.0
        axis = _torso_axis(joints)
        planar = math.hypot(axis[0], axis[1])
        # lying: torso axis within pi/4 of the ground plane
        flat = abs(math.atan2(axis[2], planar)) < TORSO_MAX_ANGLE
        return near and avg_up and flat

    if kind == "touch":
        hand_pos = joints[JOINTS.index(goal.hand)]
        target = (
            np.asarray(goal.location + (0.0,))
            if goal.target_id is None
            else _object_center(scene, goal.target_id, sim_frame.object_positions)
        )
        close = float(np.linalg.norm(hand_pos - target)) <= NEAR_SURFACE
        forced, _ = is_force_applied(sim_frame.contacts, goal.hand)
        return close and forced

    if kind == "lift":
        center = _object_center(scene, goal.target_id, sim_frame.object_positions)
        return float(center[2]) > LIFT_HEIGHT

    raise EvaluationError(f"unknown criterion kind {kind!r}")


def _object_center(scene: SceneModel, object_id: str, positions) -> np.ndarray:
    obj = scene.get(object_id)
    los = np.array([b.lo for b in obj.convex_boxes]).min(axis=0)
    his = np.array([b.hi for b in obj.convex_boxes]).max(axis=0)
    mid_local = (los + his) / 2.0
    from .sim import _to_world_vec

    base = (
        positions[object_id]
        if obj.dynamic and object_id in positions
        else np.asarray(obj.position, float)
    )
    return base + _to_world_vec(obj, mid_local)


def evaluate_run(task_id: str, goal: FrameGoal, scene: SceneModel,
                 sim_frames: list[SimFrame], poses: list[Pose2]) -> CriterionResult:
    flags = [
        check_frame(goal, scene, sf, pose) for sf, pose in zip(sim_frames, poses)
    ]
    return CriterionResult(task_id=task_id, satisfied=flags)


# ---------------------------------------------------------------------------
# motion quality metrics


def jerk_metric(clip_prev: MotionClip, clip_next: MotionClip,
                origin: Pose2 = Pose2()) -> float:
    """Mean joint second difference at the splice frame divided by the squared
    frame interval. clip_prev supplies frame n-1, clip_next frames n and n+1."""
    if clip_prev.n_frames < 1 or clip_next.n_frames < 2:
        raise EvaluationError("need >= 1 frame before and >= 2 after the splice")
    joined = clip_prev.concat(clip_next)
    joints = world_joints(joined, origin)
    n = clip_prev.n_frames  # first frame of the future motion
    second = joints[n + 1] + joints[n - 1] - 2.0 * joints[n]
    t = 1.0 / FPS
    return float(np.mean(np.linalg.norm(second, axis=1)) / t ** 2)


def control_mae(realized: list[dict], commanded: list[dict]) -> dict[str, float]:
    """Per-channel mean absolute error at the controlled frame. Entries are
    dicts with optional keys: joint names (3-vectors, meters), 'facing'
    (radians), 'speed' (m/s), 'location' (2-vector, meters)."""
    if not realized or len(realized) != len(commanded):
        raise EvaluationError("need matching non-empty realized/commanded lists")
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for real, cmd in zip(realized, commanded):
        for key, target in cmd.items():
            if key not in real:
                continue
            if key == "facing":
                err = abs(angle_diff(float(real[key]), float(target)))
            elif key == "speed":
                err = abs(float(real[key]) - float(target))
            else:
                err = float(
                    np.linalg.norm(np.asarray(real[key], float) - np.asarray(target, float))
                )
            sums[key] = sums.get(key, 0.0) + err
            counts[key] = counts.get(key, 0) + 1
    return {k: sums[k] / counts[k] for k in sums}


# ---------------------------------------------------------------------------
# reporting


def report_csv(results: list[tuple[str, CriterionResult]]) -> str:
    """CSV per task plus aggregate success rate per kind."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["task_id", "kind", "success", "frames_to_success", "sustained_len"])
    per_kind: dict[str, list[bool]] = {}
    for kind, res in results:
        writer.writerow(
            [res.task_id, kind, int(res.success), res.frames_to_success, res.sustained_len]
        )
        per_kind.setdefault(kind, []).append(res.success)
    writer.writerow([])
    writer.writerow(["kind", "n", "success_rate"])
    for kind in sorted(per_kind):
        flags = per_kind[kind]
        writer.writerow([kind, len(flags), f"{100.0 * sum(flags) / len(flags):.1f}"])
    return buf.getvalue()
