import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roomagent.commands import Command
from roomagent.compiler import CompiledAction, MotionAttributes
from roomagent.fsm import (
    CONTACT_SURFACE_RADIUS, CONTACT_TARGET_RADIUS, DISTAL_DONE_FRAMES,
    DONE_EVAL_DELAY, EXECUTE_GATE, INTERACTION_DISTANCE, INTERACTION_FACING,
    LOCATION_CLIP, SPEED_FULL_DISTANCE, SPEED_ZERO_DISTANCE, ActiveAction,
    AgentFsm, AgentStatus, FsmState, WAYPOINT_LOOKAHEAD, should_interact,
    speed_from_distance, world_command,
)
from roomagent.motion.frames import JOINTS, Pose2, stance_clip, world_joints
from roomagent.navigation import build_map
from roomagent.sim import ContactEvent, SimFrame


def make_action(scene, caption, target, kind, joints, location, facing,
                joint_targets=None, force=(), frame=0):
    attrs = MotionAttributes(caption=caption, target_id=target, anchor_id=target,
                             kind=kind, key_joints=tuple(joints), use_ik=False)
    cmd = Command(caption=caption, location=location, facing=facing,
                  joint_targets=joint_targets or {})
    compiled = CompiledAction(command=cmd, attrs=attrs,
                              force_joints=frozenset(force))
    anchor = np.asarray(scene.get(target).position, float)
    return ActiveAction(compiled=compiled, started_frame=frame, anchor_base=anchor)


@pytest.fixture(scope="module")
def fsm_env(living_room):
    omap = build_map(living_room, resolution=96)
    return living_room, AgentFsm(living_room, omap)


def status_at(x, y, facing=0.0, frame=0):
    status = AgentStatus(pose=Pose2(x, y, facing), frame=frame)
    status.joints = world_joints(stance_clip(1), status.pose)[0]
    return status


class TestThresholds:
    def test_speed_ramp_endpoints(self):
        assert speed_from_distance(1.2) == pytest.approx(1.0)
        assert speed_from_distance(0.2) == pytest.approx(0.0)
        assert speed_from_distance(0.7) == pytest.approx(0.5)
        assert speed_from_distance(5.0) == 1.0
        assert speed_from_distance(0.05) == 0.0

    @given(st.floats(0, 10, allow_nan=False))
    def test_speed_bounds_and_continuity(self, d):
        v = speed_from_distance(d)
        assert 0.0 <= v <= 1.0
        # piecewise-linear continuity: small step, small change
        assert abs(speed_from_distance(d + 1e-6) - v) < 1e-5

    def test_interaction_switch_boundaries(self):
        # distance < 0.5 strictly, facing within 45 degrees inclusive
        assert should_interact(0.5 - 1e-9, 0.0)
        assert not should_interact(0.5, 0.0)
        assert should_interact(0.4, INTERACTION_FACING)
        assert not should_interact(0.4, INTERACTION_FACING + 1e-9)

    @given(
        st.floats(0, 3, allow_nan=False),
        st.floats(-math.pi, math.pi, allow_nan=False),
    )
    def test_transition_table_property(self, distance, facing_err):
        expected = distance < INTERACTION_DISTANCE and abs(facing_err) <= INTERACTION_FACING
        assert should_interact(distance, facing_err) is expected


class TestNavigationCommand:
    def test_far_target_walks_at_full_speed(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Sitting on sofa1.", "sofa1", "contact",
                             ["pelvis"], (4.2, 3.0), math.pi)
        status = status_at(1.0, 3.0, 0.0)
        status.active = [action]
        window = fsm.step(status, {})
        assert window.moving
        assert window.command.caption == "A person is walking."
        assert window.command.speed == 1.0
        # location clipped to at most 1.2 m ahead
        d = np.linalg.norm(np.asarray(window.command.location) - status.pose.xy)
        assert d <= LOCATION_CLIP + 1e-9

    def test_large_facing_error_turns_in_place(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Sitting on sofa1.", "sofa1", "contact",
                             ["pelvis"], (4.2, 3.0), math.pi)
        status = status_at(1.0, 3.0, math.pi)  # facing away from the path
        status.active = [action]
        window = fsm.step(status, {})
        assert window.command.caption == "A person is slowly turning around in place."
        assert window.command.location == (1.0, 3.0)
        assert window.command.speed == 0.0

    def test_interaction_state_entered(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Sitting on sofa1.", "sofa1", "contact",
                             ["pelvis"], (4.2, 3.0), math.pi,
                             joint_targets={"pelvis": (5.0, 3.0, 0.25)},
                             force=["pelvis"])
        status = status_at(4.0, 3.0, math.pi)  # 0.2 m from target, facing ok
        status.active = [action]
        window = fsm.step(status, {})
        assert status.state is FsmState.INTERACTION

    def test_distance_2m_stays_navigation(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Sitting on sofa1.", "sofa1", "contact",
                             ["pelvis"], (4.2, 3.0), math.pi)
        status = status_at(2.2, 3.0, 0.0)
        status.active = [action]
        fsm.step(status, {})
        assert status.state is FsmState.NAVIGATION


class TestInteractionStaging:
    def _sit_action(self, scene):
        return make_action(scene, "Sitting on sofa1.", "sofa1", "contact",
                           ["pelvis"], (4.2, 3.0), math.pi,
                           joint_targets={"pelvis": (5.1, 3.0, 0.25)},
                           force=["pelvis"])

    def test_approach_keeps_walking_until_gate(self, fsm_env):
        scene, fsm = fsm_env
        action = self._sit_action(scene)
        status = status_at(4.1, 3.0, math.pi)
        status.state = FsmState.INTERACTION
        status.active = [action]
        window = fsm.step(status, {})
        # stand-off is ~0.3 m from the sofa surface; error 0.25 -> approaching
        assert not action.executing or window.moving is False

    def test_execute_gate_starts_action(self, fsm_env):
        scene, fsm = fsm_env
        action = self._sit_action(scene)
        # right at the stand-off point (sofa surface x=4.7, stand-off at 4.4)
        status = status_at(4.42, 3.0, math.pi)
        status.state = FsmState.INTERACTION
        status.active = [action]
        window = fsm.step(status, {})
        assert action.executing
        assert action.execute_started_frame == status.frame

    def test_force_staging_surface_then_center(self, fsm_env):
        scene, fsm = fsm_env
        action = self._sit_action(scene)
        status = status_at(4.42, 3.0, math.pi)
        status.state = FsmState.INTERACTION
        status.active = [action]
        window = fsm.step(status, {})
        # pelvis (at stance) is > 0.1 m from the sofa surface: staged target
        # is the closest surface point, not the center
        staged = np.asarray(window.command.joint_targets["pelvis"])
        assert staged[0] < 5.1  # pulled to the near surface
        # put the pelvis within 0.1 m of the surface: retarget to center
        status.joints[JOINTS.index("pelvis")] = np.array([4.65, 3.0, 0.45])
        window = fsm.step(status, {})
        assert np.allclose(window.command.joint_targets["pelvis"], (5.1, 3.0, 0.25))

    def test_distal_bypasses_standoff(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Watching tv1.", "tv1", "distal", [],
                             (1.9, 3.0), math.pi)
        status = status_at(1.9, 3.0, math.pi)
        status.active = [action]
        window = fsm.step(status, {})
        assert action.executing
        assert window.command.caption == "Watching tv1."


class TestCheckDone:
    def _frame(self, scene, joints=None, contacts=()):
        base = world_joints(stance_clip(1), Pose2(4.4, 3.0, math.pi))[0]
        if joints:
            for name, pos in joints.items():
                base[JOINTS.index(name)] = pos
        return SimFrame(joints=base, contacts=list(contacts), object_positions={})

    def test_sixty_frame_delay(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Sitting on sofa1.", "sofa1", "contact",
                             ["pelvis"], (4.4, 3.0), math.pi,
                             joint_targets={"pelvis": (5.1, 3.0, 0.3)})
        action.executing = True
        action.execute_started_frame = 0
        status = status_at(4.4, 3.0, math.pi)
        contact = ContactEvent(frame=59, joint="pelvis", object_id="sofa1",
                               normal=(0, 0, 1.0), depth=0.01, intent=(0, 0, -0.05))
        frame = self._frame(scene, {"pelvis": (5.05, 3.0, 0.45)}, [contact])
        assert not fsm.check_done(status, action, frame, 59)   # frame 59: too early
        assert fsm.check_done(status, action, frame, 60)

    def test_distal_duration(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Watching tv1.", "tv1", "distal", [],
                             (1.9, 3.0), math.pi)
        action.executing = True
        action.execute_started_frame = 0
        status = status_at(1.9, 3.0, math.pi)
        frame = self._frame(scene)
        assert not fsm.check_done(status, action, frame, DISTAL_DONE_FRAMES)
        assert fsm.check_done(status, action, frame, DISTAL_DONE_FRAMES + 1)

    def test_contact_needs_force_and_distances(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Sitting on sofa1.", "sofa1", "contact",
                             ["pelvis"], (4.4, 3.0), math.pi,
                             joint_targets={"pelvis": (5.1, 3.0, 0.3)})
        action.executing = True
        action.execute_started_frame = 0
        status = status_at(4.4, 3.0, math.pi)
        # no contact event: not done even after the delay
        frame = self._frame(scene, {"pelvis": (5.05, 3.0, 0.45)})
        assert not fsm.check_done(status, action, frame, 100)
        # too far from the target (>0.25)
        contact = ContactEvent(frame=100, joint="pelvis", object_id="sofa1",
                               normal=(0, 0, 1.0), depth=0.01, intent=(0, 0, -0.05))
        far = self._frame(scene, {"pelvis": (4.7, 3.0, 0.9)}, [contact])
        assert not fsm.check_done(status, action, far, 100)

    def test_manipulation_rule(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Lifting plantcontainer1.", "plantcontainer1",
                             "manipulate", ["right_hand"], (0.8, 1.0), 0.0,
                             joint_targets={"right_hand": (1.3, 1.0, 0.7)},
                             force=["right_hand"])
        action.executing = True
        action.execute_started_frame = 0
        action.object_start = np.array([1.3, 1.0, 0.21])
        status = status_at(0.8, 1.0, 0.0)
        # moved 0.12 m up and the hand holds it (within reach of the center)
        frame = SimFrame(
            joints=world_joints(stance_clip(1), Pose2(0.8, 1.0, 0.0))[0],
            contacts=[],
            object_positions={"plantcontainer1": np.array([1.3, 1.0, 0.12])},
        )
        frame.joints[JOINTS.index("right_hand")] = np.array([1.3, 1.0, 0.35])
        assert fsm.check_done(status, action, frame, 80)
        # moved but hand let go (far away): not done
        frame.joints[JOINTS.index("right_hand")] = np.array([0.3, 1.0, 1.2])
        action.done = False
        assert not fsm.check_done(status, action, frame, 80)


class TestWorldCommand:
    def test_static_anchor_identity(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Sitting on sofa1.", "sofa1", "contact",
                             ["pelvis"], (4.2, 3.0), math.pi)
        assert world_command(action, scene, {}) is action.command

    def test_dynamic_anchor_shifts(self, fsm_env):
        scene, fsm = fsm_env
        action = make_action(scene, "Lifting plantcontainer1.", "plantcontainer1",
                             "manipulate", ["right_hand"], (0.8, 1.0), 0.0,
                             joint_targets={"right_hand": (1.3, 1.0, 0.3)})
        moved = {"plantcontainer1": np.array([1.5, 1.2, 0.0])}
        cmd = world_command(action, scene, moved)
        assert cmd.location == pytest.approx((1.0, 1.2))
        assert cmd.joint_targets["right_hand"] == pytest.approx((1.5, 1.2, 0.3))
