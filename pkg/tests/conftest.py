import sys
from pathlib import Path

import numpy as np
import pytest

REPO = Path(__file__).resolve().parent.parent
SCENES = REPO / "scenes"
TASKS = REPO / "tasks"
CHECKPOINT = REPO / "checkpoints" / "default.ckpt"
GOLDEN_FIXTURES = REPO / "tests" / "fixtures" / "golden"


@pytest.fixture(scope="session")
def living_room():
    from roomagent.scene import load_scene

    return load_scene(SCENES / "living_room.scene")


@pytest.fixture(scope="session")
def bedroom():
    from roomagent.scene import load_scene

    return load_scene(SCENES / "bedroom.scene")


@pytest.fixture(scope="session")
def study():
    from roomagent.scene import load_scene

    return load_scene(SCENES / "study.scene")


@pytest.fixture(scope="session")
def toy_executor():
    """Small random-weight executor for structural tests (no training)."""
    from roomagent.motion.executor import MotionExecutor

    return MotionExecutor.create(seed=0)


@pytest.fixture(scope="session")
def trained_executor():
    from roomagent.motion.executor import MotionExecutor

    if not CHECKPOINT.exists():
        pytest.skip("trained checkpoint missing (run: roomagent train)")
    return MotionExecutor.load(CHECKPOINT)
