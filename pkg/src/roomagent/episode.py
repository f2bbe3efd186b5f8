"""End-to-end episode loop: scene + task -> planner -> FSM -> motion executor
-> IK -> surrogate sim -> evaluation, in 20-frame control windows.

Each window: the executor extends motion from the executed and previously
generated prefixes, IK refines flagged hand channels, the surrogate executes
the first half of the generated future, and completion/success rules run per
frame. The planner is re-invoked on new instructions, on action completion,
and on a 150-frame cadence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ik
from .commands import Command
from .compiler import AgentView, CompiledAction, InstructionCompiler, StageFailure
from .evaluation import CriterionResult, FrameGoal, check_frame, report_csv
from .fsm import ActiveAction, AgentFsm, AgentStatus, FsmState
from .geometry import heading_of
from .motion.executor import MotionExecutor
from .motion.frames import FPS, JOINTS, MotionClip, Pose2
from .navigation import ObstacleMap, RepulsionParams, build_map
from .scene import SceneModel
from .sim import SimState, execute as sim_execute
from .tasks import MissionProgress, TaskSpec, resolve_pattern

PLANNER_CADENCE_FRAMES = 150
EXECUTE_FRAMES = 20            # frames executed per generated window
DEFAULT_MAX_FRAMES = 1600

TASK_KIND_TO_EVAL = {
    "watch": "watch", "sit": "sit", "sleep": "sleep",
    "touch": "touch", "lift": "lift",
}


@dataclass
class EpisodeConfig:
    seed: int = 0
    max_frames: int = DEFAULT_MAX_FRAMES
    planner_cadence: int = PLANNER_CADENCE_FRAMES
    guidance_scale: float = 1.5
    initial_pose: Pose2 = field(default_factory=lambda: Pose2(0.0, 0.0, 0.0))
    map_resolution: int = 128


@dataclass
class GoalTracker:
    goal_kind: str
    target_id: str
    frame_goal: FrameGoal
    flags: list[bool] = field(default_factory=list)
    succeeded: bool = False
    run: int = 0

    def update(self, ok: bool):
        self.flags.append(ok)
        self.run = self.run + 1 if ok else 0
        if self.run > 30:
            self.succeeded = True


@dataclass
class EpisodeResult:
    success: bool
    frames: int
    results: list[tuple[str, CriterionResult]]
    trace_lines: list[str]

    def report(self) -> str:
        return report_csv(self.results)


class EpisodeRunner:
    def __init__(
        self,
        scene: SceneModel,
        executor: MotionExecutor,
        gateway,
        task: TaskSpec | None = None,
        config: EpisodeConfig | None = None,
        params: RepulsionParams | None = None,
        on_frame=None,
    ):
        self.scene = scene
        self.executor = executor
        self.config = config or EpisodeConfig()
        self.task = task
        self.params = params or RepulsionParams()
        self.omap: ObstacleMap = build_map(scene, resolution=self.config.map_resolution)
        self.compiler = InstructionCompiler(scene, gateway, self.omap)
        self.fsm = AgentFsm(scene, self.omap, self.params)
        self.on_frame = on_frame

        from roomagent.motion.diffusion import SamplerConfig

        self.sampler = SamplerConfig(guidance_scale=self.config.guidance_scale)
        self.rng = np.random.default_rng(self.config.seed)
        self.status = AgentStatus(pose=self.config.initial_pose)
        self.sim_state = SimState(scene=scene, pose=self.config.initial_pose)
        self.status.joints = self.sim_state.joints.copy()
        self.progress = MissionProgress(task) if task else None
        self.trackers: dict[int, list[GoalTracker]] = {}
        self.pending_instructions: list[str] = []
        self.trace_lines: list[str] = []
        self._last_plan_frame = -10**9
        self._completed_since_plan = False

        self.executed_prefix = self.executor.stance_prefix()
        self.generated_prefix = self.executor.stance_prefix()
        self.window_origin = self.config.initial_pose

        if task is not None:
            self.compiler.begin(task.prompt)
            self._activate_group_trackers()

    # -- mission bookkeeping -------------------------------------------------

    def _activate_group_trackers(self):
        if self.progress is None or self.progress.done:
            return
        gi = self.progress.current_group_index
        if gi in self.trackers:
            return
        group = []
        for st in self.progress.current_goals():
            target = resolve_pattern(st.goal.target_pattern, self.scene, self.progress)
            st.resolved_id = target
            obj = self.scene.get(target)
            forward = obj.front_yaw()
            group.append(
                GoalTracker(
                    goal_kind=st.goal.kind,
                    target_id=target,
                    frame_goal=FrameGoal(
                        kind=TASK_KIND_TO_EVAL[st.goal.kind],
                        target_id=target,
                        hand="right_hand",
                        surface_ref=target,
                        forward_ref=forward,
                    ),
                )
            )
        self.trackers[gi] = group

    def _refresh_goal_hands(self):
        """Bind touch goals to the hand the compiled action actually uses."""
        if self.progress is None or self.progress.done:
            return
        from dataclasses import replace

        for tracker in self.trackers.get(self.progress.current_group_index, []):
            for action in self.status.active:
                if action.attrs.target_id == tracker.target_id:
                    hands = [j for j in action.attrs.key_joints if j.endswith("hand")]
                    if hands:
                        tracker.frame_goal = replace(tracker.frame_goal, hand=hands[0])
                    if tracker.frame_goal.forward_ref is None and action.command.facing is not None:
                        tracker.frame_goal = replace(
                            tracker.frame_goal, forward_ref=action.command.facing
                        )

    # -- planner ----------------------------------------------------------------

    def submit_instruction(self, text: str):
        self.pending_instructions.append(text)

    def _should_plan(self) -> bool:
        if self.pending_instructions:
            return True
        if self._completed_since_plan:
            return True
        return self.status.frame - self._last_plan_frame >= self.config.planner_cadence

    def _agent_view(self) -> AgentView:
        actions = [
            (
                a.command.caption,
                a.elapsed(self.status.frame) / FPS,
                "done" if a.done else "executing",
            )
            for a in self.status.active
        ]
        holding = {
            "left_hand": self.status.held_objects.get("left_hand"),
            "right_hand": self.status.held_objects.get("right_hand"),
        }
        return AgentView(pose=self.status.pose, holding=holding, actions=actions)

    def _invoke_planner(self):
        self._last_plan_frame = self.status.frame
        self._completed_since_plan = False
        if self.pending_instructions:
            text = self.pending_instructions.pop(0)
            if self.compiler.instruction is None:
                self.compiler.begin(text)
            else:
                from .vlm import ChatTurn

                self.compiler.conversation.append(
                    ChatTurn(role="user", text=f"New instruction: {text}")
                )
        view = self._agent_view()
        existing = [a.attrs for a in self.status.active if not a.done]
        decision, compiled = self.compiler.plan_step(view, existing)
        self._trace({"t": "plan", "decision": decision.verb,
                     "caption": decision.caption})
        if decision.verb == "start" and compiled is not None:
            anchor_base = None
            if compiled.attrs.interactive:
                anchor = self.scene.get(compiled.attrs.anchor_id)
                anchor_base = np.asarray(anchor.position, float)
            self.status.active.append(
                ActiveAction(
                    compiled=compiled,
                    started_frame=self.status.frame,
                    anchor_base=anchor_base,
                )
            )
            self._refresh_goal_hands()
        elif decision.verb == "stop" and decision.caption:
            for action in list(self.status.active):
                if action.command.caption == decision.caption:
                    self.status.active.remove(action)

    # -- main loop ------------------------------------------------------------

    def run(self) -> EpisodeResult:
        cfg = self.config
        while self.status.frame < cfg.max_frames:
            if self.progress is not None and self.progress.done:
                break
            if self._should_plan():
                self._invoke_planner()
            window = self.fsm.step(self.status, self.sim_state.object_positions)
            self._execute_window(window)
        results = self._collect_results()
        success = self.progress.done if self.progress is not None else True
        return EpisodeResult(
            success=success,
            frames=self.status.frame,
            results=results,
            trace_lines=self.trace_lines,
        )

    def _execute_window(self, window):
        cmd = window.command
        future = self.executor.rollout(
            cmd,
            self.executed_prefix,
            self.generated_prefix,
            origin=self.window_origin,
            rng=self.rng,
            sampler=self.sampler,
        )
        ik_targets = {}
        for action in self.status.active:
            if action.done or not action.attrs.use_ik or not action.executing:
                continue
            for joint, tgt in window.command.joint_targets.items():
                if joint.endswith("hand") and joint in action.attrs.key_joints:
                    ik_targets[joint] = tgt
        if ik_targets:
            future = ik.apply_to_clip(future, ik_targets, origin=self.status.pose)

        to_execute = MotionClip(future.frames[:EXECUTE_FRAMES].copy())
        self.sim_state.grasping = dict(window.grasping)
        executed, sim_frames, self.sim_state = sim_execute(to_execute, self.sim_state)

        window_start_pose = self.status.pose
        for i, sf in enumerate(sim_frames):
            frame_idx = self.status.frame + i
            pose = Pose2(
                float(sf.joints[0, 0]), float(sf.joints[0, 1]),
                self._frame_facing(executed, window_start_pose, i),
            )
            self._update_goals(sf, pose)
            for action in self.status.active:
                before = action.done
                self.fsm.check_done(self.status, action, sf, frame_idx)
                if action.done and not before:
                    self._completed_since_plan = True
            self._trace_frame(frame_idx, sf, pose, cmd, window)
            if self.on_frame:
                self.on_frame(frame_idx, sf, pose, window)

        self.status.frame += len(sim_frames)
        self.status.pose = self.sim_state.pose
        self.status.joints = self.sim_state.joints.copy()
        for hand, obj in self.sim_state.grasping.items():
            if hand in self.sim_state.held:
                self.status.held_objects[hand] = obj

        self.window_origin = window_start_pose
        self.executed_prefix = executed
        self.generated_prefix = MotionClip(future.frames[:EXECUTE_FRAMES].copy())

    @staticmethod
    def _frame_facing(executed: MotionClip, origin: Pose2, i: int) -> float:
        yaw = origin.facing
        for k in range(i):
            yaw += executed.frames[k, 0]
        from .geometry import wrap_angle

        return wrap_angle(yaw)

    def _update_goals(self, sim_frame, pose: Pose2):
        if self.progress is None or self.progress.done:
            return
        gi = self.progress.current_group_index
        trackers = self.trackers.get(gi, [])
        for tracker, st in zip(trackers, self.progress.current_goals()):
            if tracker.succeeded:
                continue
            ok = check_frame(tracker.frame_goal, self.scene, sim_frame, pose)
            tracker.update(ok)
            if tracker.succeeded and not st.done:
                from .tasks import advance

                advance(self.progress, st.goal, tracker.target_id)
                self._completed_since_plan = True
        if not self.progress.done and self.progress.current_group_index != gi:
            self._activate_group_trackers()

    def _collect_results(self):
        out = []
        for gi in sorted(self.trackers):
            for k, tracker in enumerate(self.trackers[gi]):
                res = CriterionResult(
                    task_id=f"group{gi}.{k}:{tracker.goal_kind}:{tracker.target_id}",
                    satisfied=tracker.flags,
                )
                out.append((tracker.goal_kind, res))
        return out

    # -- tracing -----------------------------------------------------------------

    def _trace(self, record: dict):
        record["v"] = "v1"
        self.trace_lines.append(json.dumps(record, sort_keys=True))

    def _trace_frame(self, frame_idx: int, sf, pose: Pose2, cmd: Command, window):
        self._trace({
            "t": "frame",
            "frame": frame_idx,
            "state": self.status.state.value,
            "cmd": cmd.digest(),
            "pose": [round(pose.x, 6), round(pose.y, 6), round(pose.facing, 6)],
            "speed": cmd.speed,
            "done": [a.done for a in self.status.active],
        })


def run_episode(
    scene_path,
    task_path,
    backend,
    seed: int = 0,
    trace_path=None,
    executor: MotionExecutor | None = None,
    config: EpisodeConfig | None = None,
) -> EpisodeResult:
    """Load inputs, run one episode, optionally write the trace file."""
    from .scene import load_scene
    from .tasks import load_task

    scene = load_scene(scene_path)
    task = load_task(task_path)
    executor = executor or MotionExecutor.create(seed=seed)
    cfg = config or EpisodeConfig(seed=seed)
    runner = EpisodeRunner(scene, executor, backend, task=task, config=cfg)
    result = runner.run()
    if trace_path:
        Path(trace_path).write_text("\n".join(result.trace_lines) + "\n", encoding="utf-8")
    return result
