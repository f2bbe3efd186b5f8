import math

import numpy as np
import pytest
from shapely.geometry import Point

from roomagent.commands import Command
from roomagent.compiler import (
    AgentView, CompiledAction, ConflictReport, InstructionCompiler, LogicError,
    MergeConflictError, MotionAttributes, StageFailure, build_direction_labels,
    build_distance_labels, build_facing_labels, count_action_verbs,
    detect_conflicts, joint_grid, mark_objects, merge_commands, reflect,
    resolve_grid_direction, scene_description,
)
from roomagent.motion.frames import Pose2
from roomagent.scene import footprint, load_scene
from roomagent.scripted import RuleAnswerer
from roomagent.vlm import ChatTurn, FormatError


@pytest.fixture
def compiler(living_room):
    return InstructionCompiler(living_room, RuleAnswerer(living_room))


def default_view():
    return AgentView(pose=Pose2(1.5, 3.0, 0.0),
                     holding={"left_hand": None, "right_hand": None})


class TestMarkObjects:
    def test_marks_known_names(self, living_room):
        marked, found = mark_objects("Sitting on sofa1.", living_room)
        assert marked == "Sitting on <sofa1>."
        assert found == ["sofa1"]

    def test_longest_name_wins(self, study):
        marked, found = mark_objects("grab bookstack1 now", study)
        assert "<bookstack1>" in marked
        assert found == ["bookstack1"]

    def test_no_double_marking(self, living_room):
        marked, _ = mark_objects("Sitting on <sofa1>.", living_room)
        assert marked.count("<") == 1


class TestVerbCounting:
    @pytest.mark.parametrize("caption,count", [
        ("Sitting on sofa1.", 1),
        ("A person is walking.", 1),
        ("Sitting on sofa1 and touching lamp1.", 2),
        ("Standing.", 1),
        ("Grab a book, then sit down.", 2),
        ("Turn on lamp1.", 1),
    ])
    def test_counts(self, caption, count):
        assert count_action_verbs(caption) == count


class TestDirectionLabels:
    def test_open_floor_gives_eight(self, living_room):
        # the plant container sits in open floor away from walls
        sheet = build_direction_labels(living_room.get("plantcontainer1"), living_room)
        assert len(sheet.labels) == 8
        assert [l.index for l in sheet.labels] == list(range(1, 9))

    def test_wall_side_excluded_and_points_free(self, living_room):
        # sofa backs onto the east wall: rear labels dropped
        sofa = living_room.get("sofa1")
        sheet = build_direction_labels(sofa, living_room)
        assert len(sheet.labels) < 8
        prints = [footprint(o) for o in living_room.objects if not o.dynamic]
        floor = living_room.floor_polygon()
        for label in sheet.labels:
            p = Point(label.point)
            assert floor.contains(p)            # point-in-polygon oracle
            assert not any(fp.contains(p) for fp in prints)

    def test_front_label_named(self, living_room):
        sofa = living_room.get("sofa1")  # front faces -x
        sheet = build_direction_labels(sofa, living_room)
        front = [l for l in sheet.labels if "in the front of" in l.description]
        assert len(front) == 1
        assert front[0].point[0] < sofa.position[0]  # on the -x side

    def test_distal_keeps_blocked_rays(self, study):
        from roomagent.compiler import PlanningFailure

        monitor = study.get("monitor1")  # sits on the desk: no stand points
        as_direction = build_direction_labels(monitor, study, stand_points=False)
        assert len(as_direction.labels) == 8
        with pytest.raises(PlanningFailure):
            build_direction_labels(monitor, study, stand_points=True)

    def test_distance_ladder(self, living_room):
        tv = living_room.get("tv1")
        sheet = build_direction_labels(tv, living_room, stand_points=False)
        front = [l for l in sheet.labels if "front" in l.description][0]
        ladder = build_distance_labels(tv, living_room, front)
        assert ladder.labels[0].description.endswith("0.5m")
        assert ladder.labels[1].description.endswith("1.5m")
        # each rung sits at the advertised distance from the boundary
        b0 = np.asarray(front.point) - 0.4 * np.array(
            [math.cos(front.angle), math.sin(front.angle)]
        )
        d1 = np.linalg.norm(np.asarray(ladder.labels[1].point) - b0)
        assert d1 == pytest.approx(1.5, abs=1e-9)


class TestFacingLabels:
    def test_arrow_one_points_at_anchor(self, living_room):
        sofa = living_room.get("sofa1")
        location = (3.0, 3.0)
        sheet = build_facing_labels(sofa, location)
        from roomagent.compiler import object_center

        center = object_center(sofa)[:2]
        expected = math.atan2(center[1] - 3.0, center[0] - 3.0)
        assert sheet.labels[0].angle == pytest.approx(expected)
        assert "directly to the sofa1" in sheet.labels[0].description
        assert "away from the sofa1" in sheet.labels[4].description

    def test_eight_arrows_45_apart(self, living_room):
        sheet = build_facing_labels(living_room.get("sofa1"), (2.0, 2.0))
        assert len(sheet.labels) == 8
        from roomagent.geometry import angle_diff

        for a, b in zip(sheet.labels, sheet.labels[1:]):
            assert abs(angle_diff(b.angle, a.angle)) == pytest.approx(math.pi / 4)


class TestJointGrid:
    def test_side_face_selection(self, living_room):
        desk = living_room.get("desk1")
        grid = joint_grid(desk, Pose2(3.0, 3.0, math.pi / 2))  # south of the desk
        assert grid.face == "-y"
        assert grid.points.shape == (64, 3)
        # all points on the -y face plane
        assert np.allclose(grid.points[:, 1], desk.position[1] - 0.35)

    def test_top_face_when_looking_down(self, living_room):
        plant = living_room.get("plantcontainer1")  # 0.42 m tall, eye at 1.5
        grid = joint_grid(plant, Pose2(1.35, 1.0, 0.0))
        assert grid.face == "top"
        assert np.allclose(grid.points[:, 2], 0.42)

    def test_rows_top_to_bottom(self, living_room):
        desk = living_room.get("desk1")
        grid = joint_grid(desk, Pose2(3.0, 3.0, math.pi / 2))
        # row-major: first 8 labels are the topmost row
        assert grid.points[:8, 2].min() > grid.points[-8:, 2].max()

    def test_direction_resolution(self, living_room):
        desk = living_room.get("desk1")
        grid = joint_grid(desk, Pose2(3.0, 3.0, math.pi / 2))
        from roomagent.compiler import object_center

        center = object_center(desk)
        point = grid.point(28)
        assert np.allclose(resolve_grid_direction("up", grid, center, point), (0, 0, 1))
        assert np.allclose(resolve_grid_direction("down", grid, center, point), (0, 0, -1))
        toward = resolve_grid_direction("toward the object center", grid, center, point)
        assert float(toward @ (center - point)) > 0
        into = resolve_grid_direction("directed into the image", grid, center, point)
        assert np.allclose(into, grid.view_dir)
        forward = resolve_grid_direction("forward", grid, center, point)
        assert np.allclose(forward, grid.view_dir)
        with pytest.raises(FormatError):
            resolve_grid_direction("sideways", grid, center, point)

    def test_hand_dryer_offset_case(self, living_room):
        """Surface point p, direction down, distance 0.2 -> p + (0,0,-0.2)."""
        desk = living_room.get("desk1")
        grid = joint_grid(desk, Pose2(3.0, 3.0, math.pi / 2))
        from roomagent.compiler import object_center

        p = grid.point(12)
        direction = resolve_grid_direction("down", grid, object_center(desk), p)
        target = p + 0.2 * direction
        assert np.allclose(target, p + (0, 0, -0.2))

    def test_zero_distance_is_surface_point(self, living_room):
        desk = living_room.get("desk1")
        grid = joint_grid(desk, Pose2(3.0, 3.0, math.pi / 2))
        from roomagent.compiler import object_center

        p = grid.point(5)
        direction = resolve_grid_direction("toward the object center", grid,
                                           object_center(desk), p)
        assert np.allclose(p + 0.0 * direction, p)


class TestConflicts:
    def _attrs(self, caption, target, kind, joints, anchor=None):
        return MotionAttributes(caption=caption, target_id=target,
                                anchor_id=anchor or target, kind=kind,
                                key_joints=tuple(joints))

    def test_shared_joint(self, living_room):
        a = self._attrs("a", "sofa1", "contact", ["right_hand"])
        b = self._attrs("b", "lamp1", "contact", ["right_hand"])
        report = detect_conflicts(living_room, a, b)
        assert report.conflict
        assert "right_hand" in report.reasons[0]

    def test_nearby_non_distal_ok(self, living_room):
        # lamp1 and trinket1 sit 0.7 m apart on the desk
        a = self._attrs("a", "lamp1", "contact", ["right_hand"])
        b = self._attrs("b", "trinket1", "contact", ["left_hand"])
        assert not detect_conflicts(living_room, a, b).conflict

    def test_far_apart_conflict(self, living_room):
        a = self._attrs("a", "sofa1", "contact", ["pelvis"])
        b = self._attrs("b", "tv1", "contact", ["right_hand"])
        report = detect_conflicts(living_room, a, b)
        assert report.conflict
        assert "too far apart" in report.reasons[0]

    def test_symmetry(self, living_room):
        a = self._attrs("a", "sofa1", "contact", ["pelvis"])
        b = self._attrs("b", "tv1", "contact", ["right_hand"])
        ab = detect_conflicts(living_room, a, b)
        ba = detect_conflicts(living_room, b, a)
        assert ab.conflict == ba.conflict

    def test_distal_pair_skips_distance_rule(self, living_room):
        a = self._attrs("a", "sofa1", "distal", ["head"])
        b = self._attrs("b", "tv1", "distal", [])
        # anchors are far apart: still a conflict by the anchor rule
        assert detect_conflicts(living_room, a, b).conflict
        # but nearby anchors with distal kinds pass
        c = self._attrs("c", "lamp1", "distal", [])
        d = self._attrs("d", "trinket1", "distal", ["head"])
        assert not detect_conflicts(living_room, c, d).conflict


class TestMerge:
    def test_singleton_identity(self):
        cmd = Command(caption="Sitting on sofa1.", location=(1.0, 2.0), facing=0.5)
        assert merge_commands([cmd]) is cmd

    def test_caption_conjunction_and_union(self):
        sit = Command(caption="Sitting on sofa1.", location=(1.0, 2.0), facing=0.3,
                      joint_targets={"pelvis": (1.0, 2.0, 0.45)})
        touch = Command(caption="Turn on lamp1.", location=(1.1, 2.0), facing=0.4,
                        joint_targets={"right_hand": (1.4, 2.2, 0.9)})
        merged = merge_commands([sit, touch])
        assert merged.caption == "Sitting on sofa1 and turn on lamp1."
        assert merged.location == (1.1, 2.0)         # most recent wins
        assert merged.facing == pytest.approx(0.4)
        assert set(merged.joint_targets) == {"pelvis", "right_hand"}

    def test_shared_joint_rejected(self):
        a = Command(caption="a.", joint_targets={"left_hand": (0, 0, 1)})
        b = Command(caption="b.", joint_targets={"left_hand": (1, 0, 1)})
        with pytest.raises(MergeConflictError):
            merge_commands([a, b])

    def test_associativity_on_compatible_sets(self):
        cmds = [
            Command(caption="a.", location=(0.0, 0.0),
                    joint_targets={"pelvis": (0, 0, 0.5)}),
            Command(caption="b.", joint_targets={"left_hand": (0, 0, 1)}),
            Command(caption="c.", facing=0.7,
                    joint_targets={"right_hand": (0, 1, 1)}),
        ]
        left = merge_commands([merge_commands(cmds[:2]), cmds[2]])
        right = merge_commands([cmds[0], merge_commands(cmds[1:])])
        assert left.joint_targets == right.joint_targets
        assert left.location == right.location
        assert left.facing == right.facing


class TestReflect:
    def _convo(self):
        return [
            ChatTurn(role="user", text="question"),
            ChatTurn(role="assistant", text="bad answer"),
        ]

    def test_format_rollback_only(self):
        out = reflect(FormatError("missing delimiters"), self._convo())
        assert len(out) == 1
        assert out[0].role == "user"

    def test_logic_inserts_explanation(self):
        out = reflect(LogicError("objects too far apart", ["try another action"]),
                      self._convo())
        assert len(out) == 2
        assert out[-1].role == "user"
        assert "Command execution failed" in out[-1].text
        assert "objects too far apart" in out[-1].text
        assert "try another action" in out[-1].text

    def test_budget_exhaustion_fails_stage(self, living_room):
        class AlwaysBad:
            def complete(self, history, config=None):
                return "no delimiters here"

        compiler = InstructionCompiler(living_room, AlwaysBad())
        convo = [ChatTurn(role="user", text="pick a label >>>n<<<")]
        with pytest.raises(StageFailure):
            compiler._ask("test", convo, lambda t: int(
                __import__("roomagent.vlm", fromlist=["extract_delimited"])
                .extract_delimited(t)
            ))


class TestStages:
    def test_analyze_attributes_touch(self, compiler):
        attrs = compiler.analyze_attributes("Touching lamp1.", default_view())
        assert attrs.target_id == "lamp1"
        assert attrs.anchor_id == "lamp1"
        assert attrs.kind == "contact"
        assert attrs.key_joints == ("right_hand",)
        assert attrs.use_ik

    def test_analyze_holding_switches_hand(self, compiler):
        view = default_view()
        view.holding["right_hand"] = "book1"
        attrs = compiler.analyze_attributes("Touching lamp1.", view)
        assert attrs.key_joints == ("left_hand",)

    def test_type_v_action(self, compiler):
        attrs = compiler.analyze_attributes("Jumping.", default_view())
        assert not attrs.interactive
        assert attrs.key_joints == ()

    def test_reason_pose_non_distal_offset(self, compiler, living_room):
        attrs = MotionAttributes(caption="Touching lamp1.", target_id="lamp1",
                                 anchor_id="lamp1", kind="contact",
                                 key_joints=("right_hand",), use_ik=True)
        location, facing = compiler.reason_pose(attrs, default_view())
        pad = footprint(living_room.get("lamp1"))
        # |location - padded boundary| = 0.4 m (+- 1 cm per the contract)
        assert pad.exterior.distance(Point(location)) == pytest.approx(0.4, abs=0.01)

    def test_reason_pose_distal_distance(self, compiler, living_room):
        attrs = MotionAttributes(caption="Watching tv1.", target_id="tv1",
                                 anchor_id="tv1", kind="distal",
                                 key_joints=(), use_ik=False)
        location, facing = compiler.reason_pose(attrs, default_view())
        # the rule answerer picks the 1.5 m rung along the front ray
        tv = living_room.get("tv1")
        assert location[0] - tv.position[0] == pytest.approx(1.5 + 0.19, abs=0.05)
        # facing arrow 1 points back at the anchor
        from roomagent.compiler import object_center

        center = object_center(tv)[:2]
        expected = math.atan2(center[1] - location[1], center[0] - location[0])
        assert facing == pytest.approx(expected)

    def test_joint_targets_small_object_skips_grid(self, compiler, living_room):
        attrs = MotionAttributes(caption="Touching trinket1.", target_id="trinket1",
                                 anchor_id="trinket1", kind="contact",
                                 key_joints=("right_hand",), use_ik=True)
        targets, force = compiler.generate_joint_targets(attrs, ((2.3, 4.6), 1.57))
        from roomagent.compiler import object_center

        center = object_center(living_room.get("trinket1"))
        assert np.allclose(targets["right_hand"], center)
        assert "right_hand" in force

    def test_joint_targets_force_contact_center(self, compiler, living_room):
        attrs = MotionAttributes(caption="Sitting on sofa1.", target_id="sofa1",
                                 anchor_id="sofa1", kind="contact",
                                 key_joints=("pelvis",), use_ik=False)
        targets, force = compiler.generate_joint_targets(attrs, ((4.0, 3.0), 0.0))
        from roomagent.compiler import object_center

        assert np.allclose(targets["pelvis"], object_center(living_room.get("sofa1")))
        assert force == {"pelvis"}

    def test_plan_step_start(self, living_room):
        from roomagent.scripted import plan_from_instruction

        answerer = RuleAnswerer(living_room,
                                plan=[[("sit", "sofa1")]])
        compiler = InstructionCompiler(living_room, answerer)
        compiler.begin("sit on the sofa1")
        decision, action = compiler.plan_step(default_view(), [])
        assert decision.verb == "start"
        assert decision.caption == "Sitting on sofa1."
        assert action is not None
        assert action.command.location is not None
        assert action.attrs.kind == "contact"

    def test_plan_step_skip_while_running(self, living_room):
        answerer = RuleAnswerer(living_room, plan=[[("sit", "sofa1")]])
        compiler = InstructionCompiler(living_room, answerer)
        compiler.begin("sit on the sofa1")
        decision, action = compiler.plan_step(default_view(), [])
        view = default_view()
        view.actions = [("Sitting on sofa1.", 2.0, "executing")]
        decision2, action2 = compiler.plan_step(view, [action.attrs])
        assert decision2.verb == "skip"
        assert action2 is None

    def test_plan_step_stop_when_done(self, living_room):
        answerer = RuleAnswerer(living_room, plan=[[("sit", "sofa1")]])
        compiler = InstructionCompiler(living_room, answerer)
        compiler.begin("sit on the sofa1")
        compiler.plan_step(default_view(), [])
        view = default_view()
        view.actions = [("Sitting on sofa1.", 8.0, "done")]
        decision, _ = compiler.plan_step(view, [])
        assert decision.verb == "stop"
        assert decision.caption == "Sitting on sofa1."

    def test_decision_parsing_two_verbs(self):
        with pytest.raises(LogicError):
            InstructionCompiler.parse_decision('start("Sit on sofa1 and touch lamp1.")')

    def test_decision_parsing_formats(self):
        d = InstructionCompiler.parse_decision("skip()")
        assert d.verb == "skip"
        d = InstructionCompiler.parse_decision('  start("Jumping.") ')
        assert d.caption == "Jumping."
        with pytest.raises(FormatError):
            InstructionCompiler.parse_decision("do_something_else")


class TestDeterminism:
    def test_pose_reasoning_pure_function(self, living_room):
        """Same scene + fixtures -> identical pose, twice."""
        results = []
        for _ in range(2):
            compiler = InstructionCompiler(living_room, RuleAnswerer(living_room))
            attrs = MotionAttributes(caption="Touching lamp1.", target_id="lamp1",
                                     anchor_id="lamp1", kind="contact",
                                     key_joints=("right_hand",), use_ik=True)
            results.append(compiler.reason_pose(attrs, default_view()))
        assert results[0] == results[1]

    def test_trace_records_stages(self, compiler):
        attrs = compiler.analyze_attributes("Touching lamp1.", default_view())
        stages = {t["stage"] for t in compiler.trace}
        assert any(s.startswith("roles") for s in stages)
        assert any(s.startswith("details") for s in stages)
