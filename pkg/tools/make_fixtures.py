"""Record scripted-backend fixture files for the golden episodes.

Runs each golden episode with the rule-based answerer wrapped in a recording
gateway; every VQA exchange lands as tests/fixtures/golden/<digest>.txt so the
episodes replay offline through the plain ScriptedBackend. Re-run after any
change to prompt templates, scenes, or tasks.
"""

import shutil
import sys
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))
sys.path.insert(0, str(REPO))

from roomagent.episode import EpisodeConfig, EpisodeRunner  # noqa: E402
from roomagent.motion.executor import MotionExecutor  # noqa: E402
from roomagent.motion.frames import Pose2  # noqa: E402
from roomagent.scene import load_scene  # noqa: E402
from roomagent.scripted import RecordingGateway, RuleAnswerer, plan_from_task  # noqa: E402
from roomagent.tasks import load_task  # noqa: E402
from tests.golden import GOLDEN_EPISODES, MAX_FRAMES, episode_paths  # noqa: E402

FIXTURES = REPO / "tests" / "fixtures" / "golden"


def main():
    if FIXTURES.exists():
        shutil.rmtree(FIXTURES)
    FIXTURES.mkdir(parents=True)
    executor = MotionExecutor.load(REPO / "checkpoints" / "default.ckpt")
    all_ok = True
    for scene_stem, task_stem, pose, seed in GOLDEN_EPISODES:
        scene_path, task_path = episode_paths(scene_stem, task_stem)
        scene = load_scene(scene_path)
        task = load_task(task_path)
        gateway = RecordingGateway(
            RuleAnswerer(scene, plan=plan_from_task(task, scene)), FIXTURES
        )
        runner = EpisodeRunner(
            scene, executor, gateway, task=task,
            config=EpisodeConfig(seed=seed, max_frames=MAX_FRAMES,
                                 initial_pose=Pose2(*pose)),
        )
        t0 = time.time()
        result = runner.run()
        all_ok &= result.success
        print(f"{task_stem:16s} success={result.success!s:5s} "
              f"frames={result.frames:4d} ({time.time() - t0:4.1f}s)")
    print(f"fixture files: {len(list(FIXTURES.glob('*.txt')))}")
    if not all_ok:
        print("WARNING: not all golden episodes succeeded")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
