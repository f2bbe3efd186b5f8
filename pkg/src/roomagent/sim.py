"""Kinematic surrogate environment.

Executes generated clips against scene geometry without dynamics: joints move
toward their commanded positions under a per-frame displacement cap, joints
ending inside static boxes are projected to the nearest face (emitting contact
events), and dynamic objects grasped by a hand follow it rigidly. The executed
motion is re-encoded into the frame layout so it can feed back into the
executor's conditioning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import rot2, wrap_angle
from .motion.frames import (
    JOINTS, MotionClip, N_JOINTS, Pose2, integrate_root, reencode, world_joints,
)
from .scene import ObjectRecord, SceneModel

DISPLACEMENT_CAP = 0.15     # m per frame and joint
GRASP_RADIUS = 0.10         # m, hand-to-center distance that locks a grasp


@dataclass(frozen=True)
class ContactEvent:
    frame: int
    joint: str
    object_id: str
    normal: tuple[float, float, float]
    depth: float
    intent: tuple[float, float, float]  # commanded displacement this frame


@dataclass
class SimFrame:
    joints: np.ndarray                 # (J, 3) resolved world positions
    contacts: list[ContactEvent]
    object_positions: dict[str, np.ndarray]


@dataclass
class SimState:
    scene: SceneModel
    pose: Pose2 = field(default_factory=Pose2)
    joints: np.ndarray | None = None
    object_positions: dict[str, np.ndarray] = field(default_factory=dict)
    grasping: dict[str, str] = field(default_factory=dict)   # hand -> object id
    held: dict[str, np.ndarray] = field(default_factory=dict)  # hand -> grip offset
    frame_index: int = 0

    def __post_init__(self):
        if self.joints is None:
            from .motion.frames import stance_clip

            self.joints = world_joints(stance_clip(1), self.pose)[0]
        for obj in self.scene.objects:
            if obj.dynamic and obj.id not in self.object_positions:
                self.object_positions[obj.id] = np.asarray(obj.position, float)

    def object_center(self, object_id: str) -> np.ndarray:
        obj = self.scene.get(object_id)
        if obj.dynamic:
            base = self.object_positions[object_id]
        else:
            base = np.asarray(obj.position, float)
        lo, hi = _local_aabb(obj)
        return base + _to_world_vec(obj, (lo + hi) / 2.0)


def _local_aabb(obj: ObjectRecord) -> tuple[np.ndarray, np.ndarray]:
    los = np.array([b.lo for b in obj.convex_boxes])
    his = np.array([b.hi for b in obj.convex_boxes])
    return los.min(axis=0), his.max(axis=0)


def _to_world_vec(obj: ObjectRecord, v: np.ndarray) -> np.ndarray:
    rot = rot2(obj.yaw)
    out = np.empty(3)
    out[:2] = rot @ v[:2]
    out[2] = v[2]
    return out


def _to_local_point(obj: ObjectRecord, p: np.ndarray) -> np.ndarray:
    rot = rot2(-obj.yaw)
    out = np.empty(3)
    out[:2] = rot @ (p[:2] - np.asarray(obj.position[:2]))
    out[2] = p[2] - obj.position[2]
    return out


def nearest_face_exit(lo, hi, p) -> tuple[np.ndarray, np.ndarray, float]:
    """For a point strictly inside [lo, hi]: projected point on the nearest
    face, the outward unit normal of that face, and the penetration depth."""
    gaps = [
        (p[0] - lo[0], 0, -1.0), (hi[0] - p[0], 0, 1.0),
        (p[1] - lo[1], 1, -1.0), (hi[1] - p[1], 1, 1.0),
        (p[2] - lo[2], 2, -1.0), (hi[2] - p[2], 2, 1.0),
    ]
    depth, axis, sign = min(gaps, key=lambda g: g[0])
    out = np.asarray(p, float).copy()
    out[axis] = lo[axis] if sign < 0 else hi[axis]
    normal = np.zeros(3)
    normal[axis] = sign
    return out, normal, float(depth)


def resolve_point(scene: SceneModel, p: np.ndarray) -> tuple[np.ndarray, list]:
    """Push a point out of every static convex box it penetrates; returns the
    resolved point and (object_id, world normal, depth) hits."""
    hits = []
    p = np.asarray(p, float).copy()
    for _ in range(4):  # a few passes settle overlapping boxes
        moved = False
        for obj in scene.objects:
            if obj.dynamic:
                continue
            local = _to_local_point(obj, p)
            for box in obj.convex_boxes:
                lo = np.asarray(box.lo)
                hi = np.asarray(box.hi)
                if np.all(local > lo) and np.all(local < hi):
                    exit_local, normal_local, depth = nearest_face_exit(lo, hi, local)
                    p = np.asarray(obj.position, float) + _to_world_vec(obj, exit_local)
                    hits.append((obj.id, _to_world_vec(obj, normal_local), depth))
                    local = _to_local_point(obj, p)
                    moved = True
        if not moved:
            break
    return p, hits


def closest_surface_point(scene: SceneModel, object_id: str, p,
                          positions: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Closest point on the object's box union to a world point."""
    obj = scene.get(object_id)
    p = np.asarray(p, float)
    shift = np.zeros(3)
    if obj.dynamic and positions and object_id in positions:
        shift = positions[object_id] - np.asarray(obj.position, float)
    local = _to_local_point(obj, p - shift)
    best = None
    best_d = math.inf
    for box in obj.convex_boxes:
        lo, hi = np.asarray(box.lo), np.asarray(box.hi)
        clamped = np.minimum(np.maximum(local, lo), hi)
        d = float(np.linalg.norm(local - clamped))
        if d < best_d:
            best_d, best = d, clamped
    world = np.asarray(obj.position, float) + _to_world_vec(obj, best) + shift
    return world


def surface_distance(scene: SceneModel, object_id: str, p,
                     positions: dict[str, np.ndarray] | None = None) -> float:
    """Distance from a world point to the object's box union (0 if inside)."""
    obj = scene.get(object_id)
    p = np.asarray(p, float)
    if obj.dynamic and positions and object_id in positions:
        shifted = positions[object_id] - np.asarray(obj.position, float)
        p = p - shifted
    local = _to_local_point(obj, p)
    best = math.inf
    for box in obj.convex_boxes:
        lo, hi = np.asarray(box.lo), np.asarray(box.hi)
        clamped = np.minimum(np.maximum(local, lo), hi)
        best = min(best, float(np.linalg.norm(local - clamped)))
    return best


def role_surface_distance(scene: SceneModel, object_id: str, role: str, p,
                          positions: dict[str, np.ndarray] | None = None) -> float:
    """Distance from a world point to the top faces of the boxes tagged with
    `role` in the scene file; falls back to all boxes when none carry it."""
    obj = scene.get(object_id)
    p = np.asarray(p, float)
    if obj.dynamic and positions and object_id in positions:
        p = p - (positions[object_id] - np.asarray(obj.position, float))
    local = _to_local_point(obj, p)
    boxes = [b for b in obj.convex_boxes if b.role == role] or list(obj.convex_boxes)
    best = math.inf
    for box in boxes:
        lo, hi = np.asarray(box.lo), np.asarray(box.hi)
        clamped_xy = np.minimum(np.maximum(local[:2], lo[:2]), hi[:2])
        face_point = np.array([clamped_xy[0], clamped_xy[1], hi[2]])
        best = min(best, float(np.linalg.norm(local - face_point)))
    return best


def execute(clip: MotionClip, state: SimState) -> tuple[MotionClip, list[SimFrame], SimState]:
    """Run a generated clip through the surrogate; clip frame 0 is anchored at
    the state's current pose. Deterministic in (clip, state)."""
    if clip.n_frames < 1:
        raise ValueError("clip must have at least one frame")
    scene = state.scene
    targets = world_joints(clip, state.pose)
    _, yaw = integrate_root(clip, state.pose)
    current = state.joints.copy()
    obj_pos = {k: v.copy() for k, v in state.object_positions.items()}
    held = dict(state.held)
    grasping = dict(state.grasping)

    frames: list[SimFrame] = []
    resolved_all = np.zeros((clip.n_frames, N_JOINTS, 3))
    for i in range(clip.n_frames):
        contacts: list[ContactEvent] = []
        next_joints = current.copy()
        for j, name in enumerate(JOINTS):
            intent = targets[i, j] - current[j]
            step = float(np.linalg.norm(intent))
            if step > DISPLACEMENT_CAP:
                moved = current[j] + intent * (DISPLACEMENT_CAP / step)
            else:
                moved = targets[i, j].copy()
            resolved, hits = resolve_point(scene, moved)
            for object_id, normal, depth in hits:
                contacts.append(
                    ContactEvent(
                        frame=state.frame_index + i, joint=name, object_id=object_id,
                        normal=tuple(normal), depth=depth, intent=tuple(intent),
                    )
                )
            next_joints[j] = resolved
        current = next_joints

        # grasp locking and rigid carry
        for hand, object_id in grasping.items():
            j = JOINTS.index(hand)
            if hand not in held:
                center = _dynamic_center(scene, object_id, obj_pos)
                if np.linalg.norm(current[j] - center) <= GRASP_RADIUS:
                    held[hand] = obj_pos[object_id] - current[j]
            if hand in held:
                obj_pos[object_id] = current[j] + held[hand]

        resolved_all[i] = current
        frames.append(
            SimFrame(
                joints=current.copy(), contacts=contacts,
                object_positions={k: v.copy() for k, v in obj_pos.items()},
            )
        )

    executed = reencode(resolved_all, yaw, rotations_from=clip)
    new_state = SimState(
        scene=scene,
        pose=Pose2(float(current[0, 0]), float(current[0, 1]), float(yaw[-1])),
        joints=current.copy(),
        object_positions=obj_pos,
        grasping=grasping,
        held=held,
        frame_index=state.frame_index + clip.n_frames,
    )
    return executed, frames, new_state


def _dynamic_center(scene: SceneModel, object_id: str, positions) -> np.ndarray:
    obj = scene.get(object_id)
    lo, hi = _local_aabb(obj)
    return positions[object_id] + _to_world_vec(obj, (lo + hi) / 2.0)


def is_force_applied(contacts: list[ContactEvent], joint: str) -> tuple[bool, np.ndarray | None]:
    """True when a contact on the joint has commanded displacement opposing
    the contact normal; returns the normal as the force direction."""
    for ev in contacts:
        if ev.joint != joint:
            continue
        if float(np.dot(ev.intent, ev.normal)) < -1e-9:
            return True, np.asarray(ev.normal)
    return False, None
