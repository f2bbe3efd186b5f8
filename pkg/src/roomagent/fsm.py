"""Per-window navigation/interaction state machine.

Thresholds (meters, radians, frames at 20 fps):
  0.5 / 45 deg   switch to Interaction when close and roughly facing
  0.3            stand-off distance from the target object
  0.2            positional gate that starts the interaction execution
  0.5            next-waypoint lookahead along the planned path
  1.2            command-location clip ahead of the agent
  1.2 -> 0.2     linear speed ramp from 1 m/s down to 0
  60             frames before completion checks begin
  120            frames after which a distal action completes
  0.25 / 0.1     contact: target radius / surface radius
  0.1            force-contact retarget radius (surface point -> center)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .commands import Command
from .compiler import CompiledAction, merge_commands
from .geometry import angle_diff, heading_of, wrap_angle
from .motion.frames import FPS, JOINTS, Pose2
from .navigation import ObstacleMap, PathPlan, PlanningError, RepulsionParams, plan_world
from .scene import SceneModel
from .sim import SimFrame, is_force_applied, surface_distance

INTERACTION_DISTANCE = 0.5
INTERACTION_FACING = math.pi / 4.0
STANDOFF_DISTANCE = 0.3
EXECUTE_GATE = 0.2
WAYPOINT_LOOKAHEAD = 0.5
LOCATION_CLIP = 1.2
SPEED_FULL_DISTANCE = 1.2
SPEED_ZERO_DISTANCE = 0.2
DONE_EVAL_DELAY = 60
DISTAL_DONE_FRAMES = 120
CONTACT_TARGET_RADIUS = 0.25
CONTACT_SURFACE_RADIUS = 0.1
NONCONTACT_RADIUS = 0.1
FORCE_RETARGET_RADIUS = 0.1
MANIP_MOVE_DISTANCE = 0.1
MANIP_HOLD_RADIUS = 0.1
LIFT_RAISE = 0.5               # m, held-object raise above the grasp point

TURNING_CAPTION = "A person is slowly turning around in place."
WALKING_CAPTION = "A person is walking."


class FsmState(Enum):
    NAVIGATION = "Navigation"
    INTERACTION = "Interaction"


def speed_from_distance(d: float) -> float:
    """1 m/s beyond 1.2 m, linear down to 0 at 0.2 m."""
    return float(min(max((d - SPEED_ZERO_DISTANCE) / (SPEED_FULL_DISTANCE - SPEED_ZERO_DISTANCE), 0.0), 1.0))


def should_interact(distance: float, facing_error: float) -> bool:
    return distance < INTERACTION_DISTANCE and abs(facing_error) <= INTERACTION_FACING


@dataclass
class ActiveAction:
    compiled: CompiledAction
    started_frame: int
    executing: bool = False
    execute_started_frame: int | None = None
    done: bool = False
    retargeted: set[str] = field(default_factory=set)
    object_start: np.ndarray | None = None   # manipulate: target center at start
    anchor_base: np.ndarray | None = None    # anchor position when compiled

    @property
    def attrs(self):
        return self.compiled.attrs

    @property
    def command(self) -> Command:
        return self.compiled.command

    def elapsed(self, frame: int) -> int:
        return frame - self.started_frame

    def execute_elapsed(self, frame: int) -> int:
        if self.execute_started_frame is None:
            return 0
        return frame - self.execute_started_frame

    def needs_approach(self) -> bool:
        return self.attrs.interactive and not self.attrs.distal


@dataclass
class AgentStatus:
    pose: Pose2
    active: list[ActiveAction] = field(default_factory=list)
    held_objects: dict[str, str] = field(default_factory=dict)
    state: FsmState = FsmState.NAVIGATION
    frame: int = 0
    joints: np.ndarray | None = None   # (J, 3) world, updated from the sim


@dataclass
class WindowCommand:
    command: Command
    moving: bool
    plan: PathPlan | None = None
    grasping: dict[str, str] = field(default_factory=dict)


def _anchor_shift(action: ActiveAction, scene: SceneModel, object_positions) -> np.ndarray:
    """World displacement of the action's anchor since compilation (dynamic
    anchors move when carried)."""
    attrs = action.attrs
    if not attrs.interactive or action.anchor_base is None:
        return np.zeros(2)
    obj = scene.get(attrs.anchor_id)
    current = (
        np.asarray(object_positions.get(attrs.anchor_id, obj.position)[:2])
        if obj.dynamic
        else np.asarray(obj.position[:2])
    )
    return current - action.anchor_base[:2]


def world_command(action: ActiveAction, scene: SceneModel, object_positions) -> Command:
    """Action command with anchor motion applied (local->global conversion)."""
    shift = _anchor_shift(action, scene, object_positions)
    cmd = action.command
    if not np.any(shift):
        return cmd
    from dataclasses import replace

    location = None if cmd.location is None else (
        cmd.location[0] + shift[0], cmd.location[1] + shift[1]
    )
    joints = {
        k: (v[0] + shift[0], v[1] + shift[1], v[2]) for k, v in cmd.joint_targets.items()
    }
    return replace(cmd, location=location, joint_targets=joints)


class AgentFsm:
    def __init__(self, scene: SceneModel, omap: ObstacleMap,
                 params: RepulsionParams | None = None):
        self.scene = scene
        self.omap = omap
        self.params = params or RepulsionParams()

    # -- per-window control -------------------------------------------------

    def step(self, status: AgentStatus, object_positions: dict | None = None) -> WindowCommand:
        """Produce the merged command for the next execution window and update
        the Navigation/Interaction state."""
        object_positions = object_positions or {}
        live = [a for a in status.active if not a.done]
        approach = [a for a in live if a.needs_approach() and not a.executing]

        if approach:
            primary = approach[-1]   # newest pending interaction drives movement
            cmd = world_command(primary, self.scene, object_positions)
            target = np.asarray(cmd.location)
            dist = float(np.linalg.norm(target - status.pose.xy))
            facing_err = angle_diff(cmd.facing, status.pose.facing)
            if status.state is FsmState.NAVIGATION:
                if should_interact(dist, facing_err):
                    status.state = FsmState.INTERACTION
                else:
                    return self._navigation_command(status, primary, cmd, live)
            return self._interaction_command(status, primary, cmd, live, object_positions)

        # nothing to approach: execute whatever is live in place
        status.state = FsmState.INTERACTION if any(
            a.executing for a in live
        ) else FsmState.NAVIGATION
        for action in live:
            self._begin_execution(action, status, object_positions)
        parts = [world_command(a, self.scene, object_positions) for a in live]
        if not parts:
            return WindowCommand(command=Command(caption="Standing."), moving=False)
        merged = merge_commands([self._staged(a, c, status, object_positions)
                                 for a, c in zip(live, parts)])
        return WindowCommand(
            command=merged, moving=False, grasping=self._grasping(live),
        )

    def _begin_execution(self, action: ActiveAction, status: AgentStatus,
                         object_positions: dict | None = None):
        if not action.executing:
            action.executing = True
            action.execute_started_frame = status.frame
            if action.attrs.kind == "manipulate" and action.attrs.target_id:
                from .evaluation import _object_center

                action.object_start = _object_center(
                    self.scene, action.attrs.target_id, object_positions or {}
                ).copy()

    def _grasping(self, live: list[ActiveAction]) -> dict[str, str]:
        out = {}
        for action in live:
            if action.attrs.kind == "manipulate" and action.executing:
                for joint in action.attrs.key_joints:
                    if joint.endswith("hand") and action.attrs.target_id:
                        out[joint] = action.attrs.target_id
        return out

    def _navigation_command(self, status: AgentStatus, primary: ActiveAction,
                            cmd: Command, live: list[ActiveAction]) -> WindowCommand:
        target = np.asarray(cmd.location)
        anchor = self.scene.get(primary.attrs.anchor_id)
        approach_dir = target - np.asarray(anchor.position[:2])
        if not np.any(approach_dir):
            approach_dir = np.array([1.0, 0.0])
        try:
            path = plan_world(self.omap, self.params, tuple(status.pose.xy),
                              tuple(target), tuple(approach_dir))
        except PlanningError:
            path = None
        waypoint, dist = self._next_waypoint(status.pose, path, target)
        facing_to_wp = heading_of(waypoint - status.pose.xy) if dist > 1e-6 \
            else cmd.facing
        facing_err = angle_diff(facing_to_wp, status.pose.facing)
        if abs(facing_err) > INTERACTION_FACING:
            nav = Command(
                caption=TURNING_CAPTION,
                location=(status.pose.x, status.pose.y),
                facing=facing_to_wp,
                speed=0.0,
            )
        else:
            clipped = waypoint
            if dist > LOCATION_CLIP:
                clipped = status.pose.xy + (waypoint - status.pose.xy) * (LOCATION_CLIP / dist)
            nav = Command(
                caption=WALKING_CAPTION,
                location=(float(clipped[0]), float(clipped[1])),
                facing=facing_to_wp,
                speed=speed_from_distance(dist),
            )
        merged = self._merge_concurrent(nav, status, live)
        return WindowCommand(command=merged, moving=True, plan=path,
                             grasping=self._grasping(live))

    def _merge_concurrent(self, nav: Command, status: AgentStatus,
                          live: list[ActiveAction]) -> Command:
        """Fold concurrently executing distal / manipulation / target-less
        actions into the navigation command."""
        extras = [
            a.command for a in live
            if a.executing and (
                not a.attrs.interactive
                or a.attrs.distal
                or (a.attrs.kind == "manipulate" and self._is_held(a, status))
            )
        ]
        if not extras:
            return nav
        return merge_commands([nav] + extras)

    def _is_held(self, action: ActiveAction, status: AgentStatus) -> bool:
        return any(
            status.held_objects.get(j) == action.attrs.target_id
            for j in action.attrs.key_joints
        )

    @staticmethod
    def _next_waypoint(pose: Pose2, path: PathPlan | None, target) -> tuple[np.ndarray, float]:
        """Nearest path point, then the first one farther than the lookahead."""
        if path is None or not path.waypoints:
            wp = np.asarray(target, float)
            return wp, float(np.linalg.norm(wp - pose.xy))
        pts = [np.asarray(w) for w in path.waypoints]
        nearest = min(range(len(pts)), key=lambda i: np.linalg.norm(pts[i] - pose.xy))
        for i in range(nearest, len(pts)):
            d = float(np.linalg.norm(pts[i] - pose.xy))
            if d > WAYPOINT_LOOKAHEAD:
                return pts[i], d
        wp = pts[-1]
        return wp, float(np.linalg.norm(wp - pose.xy))

    def _interaction_command(self, status: AgentStatus, primary: ActiveAction,
                             cmd: Command, live: list[ActiveAction],
                             object_positions: dict) -> WindowCommand:
        standoff = self._standoff_point(primary, cmd, object_positions)
        err = float(np.linalg.norm(standoff - status.pose.xy))
        if not primary.executing and err >= EXECUTE_GATE:
            walk = Command(
                caption=cmd.caption,
                location=(float(standoff[0]), float(standoff[1])),
                facing=cmd.facing,
                speed=speed_from_distance(err),
            )
            merged = self._merge_concurrent(walk, status, live)
            return WindowCommand(command=merged, moving=True,
                                 grasping=self._grasping(live))
        self._begin_execution(primary, status, object_positions)
        for action in live:
            if action.executing or not action.needs_approach():
                self._begin_execution(action, status, object_positions)
        parts = [
            self._staged(a, world_command(a, self.scene, object_positions), status,
                         object_positions)
            for a in live if a.executing
        ]
        merged = merge_commands(parts)
        return WindowCommand(command=merged, moving=False, grasping=self._grasping(live))

    def _standoff_point(self, action: ActiveAction, cmd: Command,
                        object_positions: dict) -> np.ndarray:
        """Stand-off 0.3 m from the target object along the approach from the
        compiled stand location."""
        target_obj = self.scene.get(action.attrs.target_id)
        from .compiler import object_center

        center = object_center(target_obj)[:2]
        if target_obj.dynamic and action.attrs.target_id in object_positions:
            shift = np.asarray(object_positions[action.attrs.target_id][:2]) \
                - np.asarray(target_obj.position[:2])
            center = center + shift
        out_dir = np.asarray(cmd.location) - center
        n = float(np.linalg.norm(out_dir))
        if n < 1e-9:
            return np.asarray(cmd.location)
        # pull the stand location in until it sits 0.3 m off the box surface
        d = surface_distance(
            self.scene, action.attrs.target_id,
            np.array([cmd.location[0], cmd.location[1], 0.5]), object_positions,
        )
        if d <= STANDOFF_DISTANCE:
            return np.asarray(cmd.location)
        return center + out_dir / n * max(n - (d - STANDOFF_DISTANCE), 0.0)

    def _staged(self, action: ActiveAction, cmd: Command, status: AgentStatus,
                object_positions: dict) -> Command:
        """Force-contact staging: surface point until within 0.1 m, then the
        object center; held manipulation targets switch to a raised point.
        Commands with a pelvis target drop the location/speed channels: the
        pelvis IS the root, so a stale stand-point location would contradict
        the pelvis goal."""
        from dataclasses import replace

        if not action.attrs.interactive:
            return cmd
        target_id = action.attrs.target_id
        joints = dict(cmd.joint_targets)
        if action.compiled.force_joints:
            from .sim import closest_surface_point

            for joint in action.compiled.force_joints:
                if joint not in joints:
                    continue
                if action.attrs.kind == "manipulate" \
                        and status.held_objects.get(joint) == target_id:
                    # held: raise the hand (and the object with it) straight up
                    base = action.object_start
                    if base is not None:
                        joints[joint] = (float(base[0]), float(base[1]),
                                         float(base[2]) + LIFT_RAISE)
                    continue
                current = status_joint(status, joint)
                if joint in action.retargeted:
                    continue
                surface = closest_surface_point(
                    self.scene, target_id, current, object_positions
                )
                if float(np.linalg.norm(current - surface)) <= FORCE_RETARGET_RADIUS:
                    action.retargeted.add(joint)
                    continue  # fall through to the center target already in joints
                joints[joint] = tuple(float(c) for c in surface)
        cmd = replace(cmd, joint_targets=joints)
        if "pelvis" in joints:
            cmd = cmd.masked(set(cmd.control_mask) - {"location", "speed"})
        return cmd

    # -- completion ------------------------------------------------------------

    def check_done(self, status: AgentStatus, action: ActiveAction,
                   sim_frame: SimFrame, frame: int) -> bool:
        """Per-frame completion evaluation (begins 60 frames into execution)."""
        if action.done:
            return True
        if not action.executing or action.execute_elapsed(frame) < DONE_EVAL_DELAY:
            return False
        attrs = action.attrs
        if not attrs.interactive or attrs.distal:
            if action.execute_elapsed(frame) > DISTAL_DONE_FRAMES:
                action.done = True
            return action.done

        cmd = world_command(action, self.scene, sim_frame.object_positions)
        if attrs.kind == "contact":
            ok = True
            for joint in attrs.key_joints:
                pos = sim_frame.joints[JOINTS.index(joint)]
                target = np.asarray(cmd.joint_targets.get(joint, pos))
                forced, _ = is_force_applied(sim_frame.contacts, joint)
                near_target = float(np.linalg.norm(pos - target)) <= CONTACT_TARGET_RADIUS
                near_surface = surface_distance(
                    self.scene, attrs.target_id, pos, sim_frame.object_positions
                ) <= CONTACT_SURFACE_RADIUS
                ok = ok and forced and near_target and near_surface
            if ok:
                action.done = True
        elif attrs.kind == "non_contact":
            ok = all(
                float(np.linalg.norm(
                    sim_frame.joints[JOINTS.index(j)]
                    - np.asarray(cmd.joint_targets.get(j, sim_frame.joints[JOINTS.index(j)]))
                )) <= NONCONTACT_RADIUS
                for j in attrs.key_joints
            )
            if ok:
                action.done = True
        elif attrs.kind == "manipulate":
            center = _object_center_now(self.scene, attrs.target_id, sim_frame)
            moved = (
                action.object_start is not None
                and float(np.linalg.norm(center - action.object_start)) > MANIP_MOVE_DISTANCE
            )
            held = any(
                float(np.linalg.norm(sim_frame.joints[JOINTS.index(j)] - center))
                <= MANIP_HOLD_RADIUS + _object_reach(self.scene, attrs.target_id)
                for j in attrs.key_joints if j.endswith("hand")
            )
            if moved and held:
                action.done = True
        return action.done


def status_joint(status: AgentStatus, joint: str) -> np.ndarray:
    """Current world joint position carried on the status (set by the episode
    loop from the simulator)."""
    joints = getattr(status, "joints", None)
    if joints is None:
        return np.array([status.pose.x, status.pose.y, 0.9])
    return joints[JOINTS.index(joint)]


def _object_center_now(scene: SceneModel, object_id: str, sim_frame: SimFrame) -> np.ndarray:
    from .evaluation import _object_center

    return _object_center(scene, object_id, sim_frame.object_positions)


def _object_reach(scene: SceneModel, object_id: str) -> float:
    obj = scene.get(object_id)
    lo = np.array([b.lo for b in obj.convex_boxes]).min(axis=0)
    hi = np.array([b.hi for b in obj.convex_boxes]).max(axis=0)
    return float(np.linalg.norm(hi - lo)) / 2.0
