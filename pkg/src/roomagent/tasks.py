"""Task grammar parsing, pattern resolution against a scene, mission progress.

Task files are JSON with two fields: "prompt" and "mission". The mission is a
two-level array: outer groups run sequentially, goals inside a group run
simultaneously. Object names follow "category[index][*]" where a bare category
wildcard-matches unvisited objects of that type and a trailing "*" keeps the
matched object available for later wildcard matches.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

from .scene import SceneModel

INTERACTION_KINDS = ("watch", "sit", "sleep", "touch", "lift")

_PATTERN_RE = re.compile(r"^(?P<category>[^\d*]+(?:\d+[^\d*]+)*)(?P<index>\d+)?(?P<star>\*)?$")


class TaskError(ValueError):
    """Raised on malformed task documents or unresolvable goals."""


class UnresolvableTargetError(TaskError):
    """No scene object matches a goal pattern (surfaced to the planner)."""


@dataclass(frozen=True)
class InteractionGoal:
    target_pattern: str
    kind: str

    def __post_init__(self):
        if self.kind not in INTERACTION_KINDS:
            raise TaskError(f"unknown interaction type {self.kind!r}")
        if _PATTERN_RE.match(self.target_pattern) is None:
            raise TaskError(f"malformed object pattern {self.target_pattern!r}")

    @property
    def category(self) -> str:
        return _PATTERN_RE.match(self.target_pattern)["category"]

    @property
    def index(self) -> int | None:
        m = _PATTERN_RE.match(self.target_pattern)["index"]
        return int(m) if m else None

    @property
    def starred(self) -> bool:
        return _PATTERN_RE.match(self.target_pattern)["star"] is not None


@dataclass(frozen=True)
class TaskSpec:
    prompt: str
    mission: tuple[tuple[InteractionGoal, ...], ...]

    def __post_init__(self):
        if not self.mission:
            raise TaskError("mission must be non-empty")
        if any(not group for group in self.mission):
            raise TaskError("mission groups must be non-empty")


@dataclass
class GoalState:
    goal: InteractionGoal
    resolved_id: str | None = None
    done: bool = False


@dataclass
class MissionProgress:
    spec: TaskSpec
    current_group_index: int = 0
    consumed_object_ids: set[str] = field(default_factory=set)
    goal_states: list[list[GoalState]] = field(default_factory=list)

    def __post_init__(self):
        if not self.goal_states:
            self.goal_states = [
                [GoalState(goal=g) for g in group] for group in self.spec.mission
            ]

    @property
    def done(self) -> bool:
        return self.current_group_index >= len(self.spec.mission)

    def current_goals(self) -> list[GoalState]:
        if self.done:
            return []
        return self.goal_states[self.current_group_index]


def parse_task(text: str) -> TaskSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaskError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or "prompt" not in doc or "mission" not in doc:
        raise TaskError("task document needs 'prompt' and 'mission' fields")
    mission = []
    for gi, group in enumerate(doc["mission"]):
        if not isinstance(group, list):
            raise TaskError(f"mission group {gi} is not an array")
        goals = []
        for entry in group:
            if not isinstance(entry, dict) or "object" not in entry or "type" not in entry:
                raise TaskError(f"mission group {gi}: goal needs 'object' and 'type'")
            goals.append(InteractionGoal(target_pattern=entry["object"], kind=entry["type"]))
        mission.append(tuple(goals))
    return TaskSpec(prompt=str(doc["prompt"]), mission=tuple(mission))


def serialize_task(spec: TaskSpec) -> str:
    doc = {
        "prompt": spec.prompt,
        "mission": [
            [{"object": g.target_pattern, "type": g.kind} for g in group]
            for group in spec.mission
        ],
    }
    return json.dumps(doc, indent=2)


def load_task(path) -> TaskSpec:
    from pathlib import Path

    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"task not found: {p}")
    return parse_task(p.read_text(encoding="utf-8"))


def resolve_pattern(pattern: str, scene: SceneModel, progress: MissionProgress | None = None) -> str:
    """Resolve an object-name pattern to a concrete object id.

    Indexed patterns name category+index exactly. Bare categories match any
    object whose category contains the token as a substring, skipping ids
    already consumed by unstarred goals; ties break by lexicographic id.
    """
    m = _PATTERN_RE.match(pattern)
    if m is None:
        raise TaskError(f"malformed object pattern {pattern!r}")
    category, index = m["category"], m["index"]
    if index is not None:
        object_id = f"{category}{index}"
        if not scene.has(object_id):
            raise UnresolvableTargetError(f"no object {object_id!r} in scene")
        return object_id
    consumed = progress.consumed_object_ids if progress is not None else set()
    matches = sorted(
        o.id for o in scene.objects if category in o.category and o.id not in consumed
    )
    if not matches:
        raise UnresolvableTargetError(f"no unvisited object matches {pattern!r}")
    return matches[0]


def advance(progress: MissionProgress, goal: InteractionGoal, resolved_id: str) -> MissionProgress:
    """Mark a goal of the current group done; move to the next group once all
    of the group's goals are done. Consumes the resolved id unless starred."""
    if progress.done:
        raise TaskError("mission already complete")
    states = progress.current_goals()
    for st in states:
        if st.goal == goal and not st.done:
            st.done = True
            st.resolved_id = resolved_id
            if not goal.starred:
                progress.consumed_object_ids.add(resolved_id)
            break
    else:
        for later in progress.goal_states[progress.current_group_index + 1:]:
            if any(st.goal == goal for st in later):
                raise TaskError("goal belongs to a future group (ordering violation)")
        raise TaskError("goal not part of the current group")
    while (
        progress.current_group_index < len(progress.spec.mission)
        and all(st.done for st in progress.goal_states[progress.current_group_index])
    ):
        progress.current_group_index += 1
    return progress


# ---------------------------------------------------------------------------
# rule-based single-interaction task generation

WATCH_CATEGORIES = ("tv", "monitor", "painting", "screen", "panel")
SIT_CATEGORIES = ("sofa", "bed", "chair", "stool", "bench", "couch")
SLEEP_CATEGORIES = ("bed",)
TOUCH_CATEGORIES = (
    "lamp", "trinket", "book", "plant", "vase", "ornament", "switch", "cup",
)
LIFT_CATEGORIES = ("plantcontainer", "container", "box", "basket", "crate")
# objects this large are awkward to lift one-handed, but still count per rules
LIFT_MIN_EXTENT = 0.15


def _matches_any(category: str, tokens) -> bool:
    return any(tok in category for tok in tokens)


def generate_single_tasks(scene: SceneModel) -> list[TaskSpec]:
    """One TaskSpec per eligible (object, interaction) pair, templated prompts."""
    tasks: list[TaskSpec] = []

    def emit(prompt: str, object_id: str, kind: str):
        tasks.append(
            TaskSpec(
                prompt=prompt,
                mission=((InteractionGoal(target_pattern=object_id, kind=kind),),),
            )
        )

    for obj in scene.objects:
        cat = obj.category
        if obj.front_direction is not None and _matches_any(cat, WATCH_CATEGORIES):
            emit(f"watching {obj.id}", obj.id, "watch")
        if _matches_any(cat, SIT_CATEGORIES):
            emit(f"sitting on {obj.id}", obj.id, "sit")
        if _matches_any(cat, SLEEP_CATEGORIES):
            emit(f"sleeping on {obj.id}", obj.id, "sleep")
        if _matches_any(cat, TOUCH_CATEGORIES):
            emit(f"touching {obj.id}", obj.id, "touch")
        if obj.dynamic and _matches_any(cat, LIFT_CATEGORIES):
            lo, hi = obj.world_aabb()
            if float(max(hi - lo)) >= LIFT_MIN_EXTENT:
                emit(f"lifting {obj.id}", obj.id, "lift")
    return tasks
