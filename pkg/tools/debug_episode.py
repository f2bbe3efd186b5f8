"""Verbose single-episode debugger: per-window pose, state, distances, and
goal-flag progress for one golden episode. Usage:

    python tools/debug_episode.py sit_sofa [guidance]
"""

import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))
sys.path.insert(0, str(REPO))

from roomagent.episode import EpisodeConfig, EpisodeRunner  # noqa: E402
from roomagent.motion.executor import MotionExecutor  # noqa: E402
from roomagent.motion.frames import Pose2  # noqa: E402
from roomagent.scene import load_scene  # noqa: E402
from roomagent.scripted import RuleAnswerer, plan_from_task  # noqa: E402
from roomagent.tasks import load_task  # noqa: E402
from tests.golden import GOLDEN_EPISODES, episode_paths  # noqa: E402


def main():
    name = sys.argv[1] if len(sys.argv) > 1 else "sit_sofa"
    guidance = float(sys.argv[2]) if len(sys.argv) > 2 else 1.5
    entry = next(e for e in GOLDEN_EPISODES if e[1] == name)
    scene_stem, task_stem, pose, seed = entry
    scene_path, task_path = episode_paths(scene_stem, task_stem)
    scene = load_scene(scene_path)
    task = load_task(task_path)
    executor = MotionExecutor.load(REPO / "checkpoints" / "default.ckpt")
    answerer = RuleAnswerer(scene, plan=plan_from_task(task, scene))
    runner = EpisodeRunner(
        scene, executor, answerer, task=task,
        config=EpisodeConfig(seed=seed, max_frames=1600,
                             initial_pose=Pose2(*pose),
                             guidance_scale=guidance),
    )

    orig_exec = runner._execute_window

    def traced_execute(window):
        cmd = window.command
        pose_now = runner.status.pose
        loc = cmd.location
        dist = (np.hypot(loc[0] - pose_now.x, loc[1] - pose_now.y)
                if loc is not None else float("nan"))
        flags = ""
        if runner.progress is not None and not runner.progress.done:
            gi = runner.progress.current_group_index
            flags = " ".join(
                f"{t.goal_kind}:run{t.run}{'*' if t.succeeded else ''}"
                for t in runner.trackers.get(gi, [])
            )
        active = ",".join(
            f"{a.command.caption[:18]}{'+' if a.executing else '-'}{'D' if a.done else ''}"
            for a in runner.status.active
        )
        print(f"f{runner.status.frame:4d} {runner.status.state.value[:3]} "
              f"pose({pose_now.x:+.2f},{pose_now.y:+.2f},{pose_now.facing:+.2f}) "
              f"cmd[{cmd.caption[:24]:24s}] loc_d={dist:5.2f} "
              f"spd={cmd.speed if cmd.speed is not None else -1:.1f} "
              f"[{active}] {flags}")
        orig_exec(window)

    runner._execute_window = traced_execute
    result = runner.run()
    print(result.report())
    print("success:", result.success, "frames:", result.frames)


if __name__ == "__main__":
    main()
