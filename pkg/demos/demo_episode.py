"""One full episode, end to end.

Scene + task file in; planner decisions, navigation, motion generation, IK
refinement, surrogate execution, and the success report out. Uses the offline
rule-based answerer so no model API is needed.
"""

import time
from pathlib import Path

from roomagent.episode import EpisodeConfig, EpisodeRunner
from roomagent.motion.executor import MotionExecutor
from roomagent.motion.frames import Pose2
from roomagent.scene import load_scene
from roomagent.scripted import RuleAnswerer, plan_from_task
from roomagent.tasks import load_task

REPO = Path(__file__).resolve().parent.parent


def main():
    scene = load_scene(REPO / "scenes" / "living_room.scene")
    task = load_task(REPO / "tasks" / "sit_sofa.json")
    executor = MotionExecutor.load(REPO / "checkpoints" / "default.ckpt")
    answerer = RuleAnswerer(scene, plan=plan_from_task(task, scene))
    runner = EpisodeRunner(
        scene, executor, answerer, task=task,
        config=EpisodeConfig(seed=0, max_frames=900,
                             initial_pose=Pose2(1.5, 1.5, 0.0)),
    )
    print(f"prompt: {task.prompt!r}")
    t0 = time.time()
    result = runner.run()
    print(f"ran {result.frames} frames ({result.frames / 20:.1f} sim-seconds) "
          f"in {time.time() - t0:.1f} s wall")
    print(result.report())
    print("success:", result.success)
    print("\nfirst planner/frame trace lines:")
    for line in result.trace_lines[:4]:
        print("  ", line[:110])


if __name__ == "__main__":
    main()
