"""Three-stage VQA instruction compiler.

Stage 1 analyzes motion attributes (object roles, interaction type, key
joints, IK flag) with five-instance majority voting; stage 2 reasons about the
agent pose through direction / distance / facing label selections; stage 3
places key-joint targets on an 8x8 surface grid. Format errors roll the
conversation back; logic errors roll back and insert an explanation turn; each
stage retries at most three times.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
from shapely.geometry import LineString, Point

from .bev import render_bev
from .commands import Command
from .geometry import heading_of, wrap_angle
from .motion.frames import Pose2
from .navigation import ObstacleMap
from .scene import ObjectRecord, SceneModel, footprint
from .vlm import (
    ChatTurn, FormatError, ImageAttachment, VlmError, extract_delimited,
    majority_vote,
)

VOTING_INSTANCES = 5
REFLECTION_BUDGET = 3
DIRECTION_LABEL_OFFSET = 0.4          # m beyond the padded footprint boundary
DISTANCE_LABEL_FIRST = 0.5            # m, distal distance ladder start
DISTANCE_LABEL_STEP = 1.0             # m
MAX_DISTANCE_LABELS = 5
SMALL_OBJECT_EXTENT = 0.25            # m, below this the joint stage is skipped
NON_DISTAL_STAND_DISTANCE = 0.4       # m
CONFLICT_DISTANCE = 1.0               # m
EYE_HEIGHT = 1.5                      # m, viewpoint for face selection

INTERACTION_KINDS = ("contact", "non_contact", "distal", "manipulate")
_KIND_ALIASES = {
    "contact": "contact",
    "non-contact": "non_contact",
    "non_contact": "non_contact",
    "noncontact": "non_contact",
    "long-range": "distal",
    "long_range": "distal",
    "distal": "distal",
    "manipulation": "manipulate",
    "manipulate": "manipulate",
}
KEY_JOINTS = ("pelvis", "left_foot", "right_foot", "left_hand", "right_hand", "head")
JOINT_DIRECTIONS = (
    "up", "down", "left", "right", "forward", "backward",
    "directed into the image", "directed out of the image",
    "toward the object center", "along the surface normal",
)
_DIRECTION_WORDS = ("front", "front-left", "left", "back-left",
                    "back", "back-right", "right", "front-right")
_ACTION_VERBS = (
    "sit", "sleep", "touch", "watch", "lift", "grab", "take", "walk", "turn",
    "stand", "jump", "lean", "place", "put", "press", "carry", "lie", "lay",
    "raise", "point", "dance", "rest", "look",
)


class CompilerError(RuntimeError):
    pass


class StageFailure(CompilerError):
    """Reflection budget exhausted in one VQA stage."""


class LogicError(CompilerError):
    """Logical inconsistency: rolled back with an inserted explanation."""

    def __init__(self, reason: str, solutions: list[str]):
        super().__init__(reason)
        self.reason = reason
        self.solutions = solutions


class PlanningFailure(CompilerError):
    pass


# ---------------------------------------------------------------------------
# templates


def load_template(name: str) -> list[tuple[str, str]]:
    text = resources.files("roomagent.prompts").joinpath(f"{name}.txt").read_text("utf-8")
    turns: list[tuple[str, str]] = []
    role = None
    lines: list[str] = []
    for line in text.splitlines():
        if line.startswith("=== "):
            if role is not None:
                turns.append((role, "\n".join(lines).strip()))
            role = line[4:].strip()
            lines = []
        else:
            lines.append(line)
    if role is not None:
        turns.append((role, "\n".join(lines).strip()))
    return turns


def render_template(name: str, values: dict, images: dict[int, list[ImageAttachment]] | None = None,
                    ) -> list[ChatTurn]:
    turns = []
    for i, (role, body) in enumerate(load_template(name)):
        text = body.format(**values)
        attach = tuple((images or {}).get(i, ()))
        turns.append(ChatTurn(role=role, text=text, images=attach))
    return turns


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class MotionAttributes:
    caption: str
    target_id: str | None = None
    anchor_id: str | None = None
    tool_id: str | None = None
    kind: str | None = None
    key_joints: tuple[str, ...] = ()
    use_ik: bool = False

    def __post_init__(self):
        if self.kind is not None and self.kind not in INTERACTION_KINDS:
            raise CompilerError(f"bad interaction kind {self.kind!r}")
        if len([j for j in self.key_joints if j != "head"]) > 2:
            raise CompilerError("no more than two contact joints")

    @property
    def interactive(self) -> bool:
        return self.target_id is not None

    @property
    def distal(self) -> bool:
        return self.kind == "distal"


@dataclass(frozen=True)
class SheetLabel:
    index: int                       # dense 1..N
    point: tuple[float, float]       # world meters
    angle: float                     # ray angle, world radians
    description: str


@dataclass(frozen=True)
class LabelSheet:
    anchor_id: str
    labels: tuple[SheetLabel, ...]

    def __post_init__(self):
        if [l.index for l in self.labels] != list(range(1, len(self.labels) + 1)):
            raise CompilerError("label ids must be dense 1..N")

    def get(self, index: int) -> SheetLabel:
        if not (1 <= index <= len(self.labels)):
            raise LogicError(
                f"Label {index} does not exist; valid labels are 1..{len(self.labels)}.",
                ["choose one of the listed label indices"],
            )
        return self.labels[index - 1]

    def description_text(self) -> str:
        return "\n".join(f"- {l.description}" for l in self.labels)


@dataclass(frozen=True)
class Decision:
    verb: str                        # skip | start | stop
    caption: str | None = None


@dataclass(frozen=True)
class CompiledAction:
    command: Command
    attrs: MotionAttributes
    force_joints: frozenset[str] = frozenset()


@dataclass
class AgentView:
    """What the planner is told about the agent each step."""

    pose: Pose2
    holding: dict[str, str | None] = field(default_factory=dict)
    actions: list[tuple[str, float, str]] = field(default_factory=list)
    # (caption, elapsed seconds, "executing"/"done")

    def state_text(self) -> str:
        acts = ", ".join(
            f'("{c}", {e:.0f}s, {status})' for c, e, status in self.actions
        ) or ""
        left = self.holding.get("left_hand") or "none"
        right = self.holding.get("right_hand") or "none"
        return (
            f"Position: ({self.pose.x:.1f}, {self.pose.y:.1f})\n"
            f"State: [{acts}]\n"
            f"Holding: {{left hand: {left}, right hand: {right}}}"
        )

    def holding_text(self) -> str:
        parts = [
            f"holding {obj} in your {hand.replace('_', ' ')}"
            for hand, obj in sorted(self.holding.items()) if obj
        ]
        return " and ".join(parts) if parts else "not holding anything"


# ---------------------------------------------------------------------------
# scene helpers


def scene_description(scene: SceneModel) -> str:
    lines = []
    children: dict[str, list[str]] = {}
    for obj in scene.objects:
        if obj.parent_id:
            children.setdefault(obj.parent_id, []).append(obj.id)
    for i, obj in enumerate(scene.objects, start=1):
        line = f"- {i}: {obj.id} ({obj.position[0]:.1f}, {obj.position[1]:.1f})"
        if obj.id in children:
            line += f", containing: [{', '.join(children[obj.id])}]"
        lines.append(line)
    return "\n".join(lines)


def mark_objects(caption: str, scene: SceneModel) -> tuple[str, list[str]]:
    """Wrap scene object names appearing in the caption with <>; longest names
    first so 'bookstack1' wins over 'book'."""
    found: list[str] = []
    marked = caption
    for obj in sorted(scene.objects, key=lambda o: -len(o.id)):
        pattern = re.compile(rf"(?<![<\w]){re.escape(obj.id)}(?![>\w])")
        if pattern.search(marked):
            marked = pattern.sub(f"<{obj.id}>", marked)
            found.append(obj.id)
    return marked, found


def _is_action_token(tok: str) -> bool:
    if tok in _ACTION_VERBS or (tok.endswith("s") and tok[:-1] in _ACTION_VERBS):
        return True
    if tok.endswith("ing"):
        stem = tok[:-3]
        if stem in _ACTION_VERBS or stem + "e" in _ACTION_VERBS:
            return True
        if len(stem) >= 2 and stem[-1] == stem[-2] and stem[:-1] in _ACTION_VERBS:
            return True  # doubled consonant: sitting -> sit
    return False


def count_action_verbs(caption: str) -> int:
    """Verb-bearing clause count; clauses split on and/while/commas. Used for
    the one-verb indivisibility rule."""
    count = 0
    for part in re.split(r"\band\b|\bwhile\b|,|;", caption.lower()):
        if any(_is_action_token(t) for t in re.findall(r"[a-z]+", part)):
            count += 1
    return count


def object_world_aabb(obj: ObjectRecord) -> tuple[np.ndarray, np.ndarray]:
    return obj.world_aabb()


def object_center(obj: ObjectRecord) -> np.ndarray:
    lo, hi = obj.world_aabb()
    return (lo + hi) / 2.0


def is_traversable(scene: SceneModel, xy, prints=None) -> bool:
    p = Point(float(xy[0]), float(xy[1]))
    if not scene.floor_polygon().contains(p):
        return False
    prints = prints if prints is not None else [footprint(o) for o in scene.objects if not o.dynamic]
    return not any(fp.contains(p) or fp.touches(p) for fp in prints)


def _semantic_direction(angle: float, front_yaw: float) -> str:
    rel = wrap_angle(angle - front_yaw)
    idx = int(round(rel / (math.pi / 4))) % 8
    return _DIRECTION_WORDS[idx]


_COMPASS = ("east", "northeast", "north", "northwest",
            "west", "southwest", "south", "southeast")


def build_direction_labels(anchor: ObjectRecord, scene: SceneModel,
                           stand_points: bool = True) -> LabelSheet:
    """Eight candidate points around the anchor at 45-degree spacing, 0.4 m
    off the padded footprint boundary. When the labels denote standing spots
    (non-distal), non-traversable points are dropped and the survivors
    renumbered densely; pure directions (distal) keep all rays."""
    pad = footprint(anchor)
    centroid = np.asarray(pad.centroid.coords[0])
    prints = [footprint(o) for o in scene.objects if not o.dynamic]
    front = anchor.front_yaw()
    labels = []
    for k in range(8):
        angle = k * math.pi / 4.0
        ray_dir = np.array([math.cos(angle), math.sin(angle)])
        far = centroid + 100.0 * ray_dir
        hits = pad.boundary.intersection(LineString([tuple(centroid), tuple(far)]))
        if hits.is_empty:
            continue
        pts = getattr(hits, "geoms", [hits])
        boundary = max(
            (np.asarray(p.coords[0]) for p in pts),
            key=lambda q: float((q - centroid) @ ray_dir),
        )
        point = boundary + DIRECTION_LABEL_OFFSET * ray_dir
        if stand_points and not is_traversable(scene, point, prints):
            continue
        if front is not None:
            where = f"in the {_semantic_direction(angle, front)} of"
        else:
            where = f"on the {_COMPASS[k]} side of"
        labels.append((point, angle, where))
    if not labels:
        raise PlanningFailure(f"no traversable stand labels around {anchor.id}")
    sheet = tuple(
        SheetLabel(
            index=i,
            point=(float(p[0]), float(p[1])),
            angle=a,
            description=f"Label {i} is {where} {anchor.id}",
        )
        for i, (p, a, where) in enumerate(labels, start=1)
    )
    return LabelSheet(anchor_id=anchor.id, labels=sheet)


def build_distance_labels(anchor: ObjectRecord, scene: SceneModel,
                          direction_label: SheetLabel) -> LabelSheet:
    """Distance ladder along the chosen ray: 0.5 m, then 1 m steps, measured
    from the padded boundary; unreachable rungs dropped."""
    ray_dir = np.array([math.cos(direction_label.angle), math.sin(direction_label.angle)])
    boundary = np.asarray(direction_label.point) - DIRECTION_LABEL_OFFSET * ray_dir
    prints = [footprint(o) for o in scene.objects if not o.dynamic]
    labels = []
    for k in range(MAX_DISTANCE_LABELS):
        d = DISTANCE_LABEL_FIRST + k * DISTANCE_LABEL_STEP
        point = boundary + d * ray_dir
        if not is_traversable(scene, point, prints):
            continue
        labels.append((point, d))
    if not labels:
        raise PlanningFailure(f"no reachable distance labels around {anchor.id}")
    sheet = tuple(
        SheetLabel(
            index=i, point=(float(p[0]), float(p[1])), angle=direction_label.angle,
            description=f"Label {i} : {d:.1f}m",
        )
        for i, (p, d) in enumerate(labels, start=1)
    )
    return LabelSheet(anchor_id=anchor.id, labels=sheet)


def build_facing_labels(anchor: ObjectRecord, location) -> LabelSheet:
    """Eight facing arrows, arrow 1 pointing exactly at the anchor."""
    center = object_center(anchor)[:2]
    base = heading_of(center - np.asarray(location))
    labels = []
    for k in range(8):
        angle = wrap_angle(base + k * math.pi / 4.0)
        deg = math.degrees(k * math.pi / 4.0)
        if k == 0:
            desc = f"Arrow 1: {deg:.0f} degrees, facing directly to the {anchor.id}."
        elif k == 4:
            desc = f"Arrow 5: {deg:.0f} degrees, facing away from the {anchor.id}."
        else:
            desc = f"Arrow {k + 1}: {deg:.0f} degrees."
        labels.append(
            SheetLabel(index=k + 1, point=tuple(map(float, location)), angle=angle,
                       description=desc)
        )
    return LabelSheet(anchor_id=anchor.id, labels=tuple(labels))


@dataclass(frozen=True)
class SurfaceGrid:
    """8x8 grid over the object face visible from the agent pose."""

    object_id: str
    face: str                        # +x/-x/+y/-y/top in object-local axes
    points: np.ndarray               # (64, 3) world coordinates, row-major
    normal: np.ndarray               # world outward unit normal
    view_dir: np.ndarray             # world horizontal unit vector agent->object

    def point(self, label: int) -> np.ndarray:
        if not (1 <= label <= 64):
            raise LogicError(
                f"Label {label} does not exist; the grid has labels 1..64.",
                ["choose a label between 1 and 64"],
            )
        return self.points[label - 1]


def joint_grid(obj: ObjectRecord, agent_pose: Pose2) -> SurfaceGrid:
    from .geometry import rot2

    lo = np.array([b.lo for b in obj.convex_boxes]).min(axis=0)
    hi = np.array([b.hi for b in obj.convex_boxes]).max(axis=0)
    eye = np.array([agent_pose.x, agent_pose.y, EYE_HEIGHT])
    center_local = np.concatenate([
        rot2(-obj.yaw) @ (eye[:2] - np.asarray(obj.position[:2])),
        [eye[2] - obj.position[2]],
    ])
    mid = (lo + hi) / 2.0
    rel = center_local - mid
    half = np.maximum((hi - lo) / 2.0, 1e-6)
    ratios = rel / half
    axis = int(np.argmax(np.abs(ratios)))
    sign = 1.0 if ratios[axis] >= 0 else -1.0
    if axis == 2 and sign < 0:
        axis, sign = 2, 1.0  # never look from below; use the top face
    names = {(0, 1.0): "+x", (0, -1.0): "-x", (1, 1.0): "+y", (1, -1.0): "-y",
             (2, 1.0): "top"}
    face = names[(axis, sign)]

    normal_local = np.zeros(3)
    normal_local[axis] = sign
    if axis == 2:
        u_axis, v_axis = 0, 1
    else:
        u_axis, v_axis = (1 if axis == 0 else 0), 2
    us = np.linspace(lo[u_axis], hi[u_axis], 17)[1::2]   # 8 cell centers
    vs = np.linspace(lo[v_axis], hi[v_axis], 17)[1::2]
    pts_local = np.zeros((64, 3))
    i = 0
    for v in vs[::-1]:                                   # rows top to bottom
        for u in us:
            p = np.zeros(3)
            p[axis] = lo[axis] if sign < 0 else hi[axis]
            p[u_axis] = u
            p[v_axis] = v
            pts_local[i] = p
            i += 1

    rot = rot2(obj.yaw)
    pts_world = np.zeros((64, 3))
    pts_world[:, :2] = pts_local[:, :2] @ rot.T + np.asarray(obj.position[:2])
    pts_world[:, 2] = pts_local[:, 2] + obj.position[2]
    normal_world = np.concatenate([rot @ normal_local[:2], [normal_local[2]]])
    to_obj = object_center(obj)[:2] - np.array([agent_pose.x, agent_pose.y])
    n = np.linalg.norm(to_obj)
    view = np.array([to_obj[0] / n, to_obj[1] / n, 0.0]) if n > 1e-9 else np.array([1.0, 0, 0])
    return SurfaceGrid(object_id=obj.id, face=face, points=pts_world,
                       normal=normal_world, view_dir=view)


def resolve_grid_direction(name: str, grid: SurfaceGrid, obj_center: np.ndarray,
                           surface_point: np.ndarray) -> np.ndarray:
    """Map a named offset direction to a world unit vector at the surface
    point. 'forward'/'into the image' are the agent's forward axis."""
    name = name.strip().lower()
    up = np.array([0.0, 0.0, 1.0])
    if name == "up":
        return up
    if name == "down":
        return -up
    if name in ("forward", "directed into the image"):
        return grid.view_dir
    if name in ("backward", "directed out of the image"):
        return -grid.view_dir
    if name == "left":
        return np.array([-grid.view_dir[1], grid.view_dir[0], 0.0])
    if name == "right":
        return np.array([grid.view_dir[1], -grid.view_dir[0], 0.0])
    if name == "toward the object center":
        d = obj_center - surface_point
        n = float(np.linalg.norm(d))
        return d / n if n > 1e-9 else up
    if name == "along the surface normal":
        return grid.normal
    raise FormatError(f"direction {name!r} not in the predefined set")


# ---------------------------------------------------------------------------
# conflict detection and merging


@dataclass(frozen=True)
class ConflictReport:
    conflict: bool
    reasons: tuple[str, ...] = ()

    def message(self, ongoing: str, new: str) -> str:
        detail = "; ".join(self.reasons)
        return (
            f'You are performing "{ongoing}", and it is impossible to perform '
            f'"{ongoing[:-1] if ongoing.endswith(".") else ongoing} and '
            f'{new[0].lower() + new[1:]}" at the same time, as {detail}.'
        )


def detect_conflicts(scene: SceneModel, existing: MotionAttributes,
                     new: MotionAttributes) -> ConflictReport:
    reasons = []
    shared = set(existing.key_joints) & set(new.key_joints)
    if shared:
        reasons.append(f"both actions involve the {', '.join(sorted(shared))}")
    if existing.interactive and new.interactive:
        if not existing.distal and not new.distal:
            d = np.linalg.norm(
                object_center(scene.get(existing.target_id))[:2]
                - object_center(scene.get(new.target_id))[:2]
            )
            if d > CONFLICT_DISTANCE:
                reasons.append(
                    f"{existing.target_id} and {new.target_id} are located too far apart"
                )
        if existing.anchor_id and new.anchor_id:
            d = np.linalg.norm(
                object_center(scene.get(existing.anchor_id))[:2]
                - object_center(scene.get(new.anchor_id))[:2]
            )
            if d > CONFLICT_DISTANCE:
                reason = (
                    f"anchor objects {existing.anchor_id} and {new.anchor_id} "
                    f"are located too far apart"
                )
                if reason not in reasons:
                    reasons.append(reason)
    return ConflictReport(conflict=bool(reasons), reasons=tuple(reasons))


class MergeConflictError(CompilerError):
    def __init__(self, report: ConflictReport):
        super().__init__("; ".join(report.reasons) or "conflicting commands")
        self.report = report


def merge_commands(commands: list[Command]) -> Command:
    """Combine concurrent commands: conjunction caption, newest pose, union of
    joint targets (pairwise-disjoint by precondition)."""
    if not commands:
        raise ValueError("nothing to merge")
    if len(commands) == 1:
        return commands[0]
    joints: dict[str, tuple[float, float, float]] = {}
    for cmd in commands:
        shared = set(joints) & set(cmd.joint_targets)
        if shared:
            raise MergeConflictError(
                ConflictReport(True, (f"both actions involve the {sorted(shared)[0]}",))
            )
        joints.update(cmd.joint_targets)
    parts = [c.caption.rstrip(".") for c in commands]
    caption = parts[0]
    for p in parts[1:]:
        caption += " and " + (p[0].lower() + p[1:] if p else p)
    caption += "."
    location = facing = speed = None
    for cmd in commands:
        if cmd.location is not None:
            location = cmd.location
        if cmd.facing is not None:
            facing = cmd.facing
        if cmd.speed is not None:
            speed = cmd.speed
    return Command(
        caption=caption, location=location, facing=facing,
        joint_targets=joints, speed=speed,
    )


# ---------------------------------------------------------------------------
# reflection


def reflect(error: Exception, conversation: list[ChatTurn]) -> list[ChatTurn]:
    """Amend a conversation whose LAST turn is the failing assistant answer:
    format errors roll it back; logic errors roll back and insert the failure
    explanation as a user turn."""
    if not conversation or conversation[-1].role != "assistant":
        raise ValueError("last turn must be the assistant answer being reflected")
    rolled = conversation[:-1]
    if isinstance(error, LogicError):
        solutions = "\n".join(f"- {s}" for s in error.solutions)
        turns = render_template(
            "conflict_feedback", {"reason": error.reason, "solutions": solutions}
        )
        return rolled + turns
    return rolled


# ---------------------------------------------------------------------------
# the compiler


class InstructionCompiler:
    def __init__(self, scene: SceneModel, gateway, omap: ObstacleMap | None = None,
                 reflection_budget: int = REFLECTION_BUDGET):
        self.scene = scene
        self.gateway = gateway
        self.omap = omap
        self.reflection_budget = reflection_budget
        self.conversation: list[ChatTurn] = []
        self.instruction: str | None = None
        self.trace: list[dict] = []

    # -- plumbing ------------------------------------------------------------

    def _bev_image(self, markers=None) -> tuple[ImageAttachment, ...]:
        if self.omap is None:
            return ()
        png = render_bev(self.omap, markers=markers)
        return (ImageAttachment(png=png, caption="bird-eye-view map"),)

    def _ask(self, stage: str, conversation: list[ChatTurn], parse):
        """One reflected VQA stage: query, parse+validate, amend on failure."""
        convo = list(conversation)
        failures = 0
        while True:
            answer = self.gateway.complete(convo)
            attempt = convo + [ChatTurn(role="assistant", text=answer)]
            try:
                result = parse(answer)
            except (FormatError, LogicError) as exc:
                failures += 1
                from .vlm import conversation_digest

                self.trace.append({
                    "stage": stage, "digest": conversation_digest(convo),
                    "payload": None, "error": str(exc),
                })
                if failures > self.reflection_budget:
                    raise StageFailure(f"{stage}: reflection budget exhausted: {exc}")
                convo = reflect(exc, attempt)
                continue
            from .vlm import conversation_digest

            self.trace.append({
                "stage": stage, "digest": conversation_digest(convo),
                "payload": answer, "error": None,
            })
            return result, attempt

    # -- planning (next-action decision) ---------------------------------------

    def begin(self, instruction: str):
        self.instruction = instruction
        self.conversation = render_template(
            "plan_next",
            {
                "scene_description": scene_description(self.scene),
                "instruction": instruction,
            },
            images={0: list(self._bev_image())},
        )

    @staticmethod
    def parse_decision(text: str) -> Decision:
        m = re.search(r"\b(skip|start|stop)\s*\(\s*(?:\"([^\"]*)\")?\s*\)", text)
        if not m:
            raise FormatError("no skip()/start()/stop() decision found")
        verb, caption = m.group(1), m.group(2)
        if verb in ("start", "stop"):
            if not caption:
                raise FormatError(f"{verb}() needs a quoted action caption")
            if count_action_verbs(caption) > 1:
                raise LogicError(
                    f'"{caption}" is not indivisible: each action must contain '
                    f"no more than one verb.",
                    ["split the command into separate start() calls"],
                )
        return Decision(verb=verb, caption=caption)

    def plan_step(self, view: AgentView, existing: list[MotionAttributes]):
        """One planner invocation: status in, decision out; start decisions
        are compiled through the three VQA stages (with conflict reflection)."""
        if self.instruction is None:
            raise CompilerError("begin(instruction) must run first")
        convo = self.conversation + [ChatTurn(role="user", text=view.state_text())]

        def parse(text: str) -> Decision:
            decision = self.parse_decision(text)
            if decision.verb == "start":
                missing = [
                    tok for tok in re.findall(r"\b([a-z]+\d+)\b", decision.caption.lower())
                    if not self.scene.has(tok)
                ]
                if missing:
                    raise LogicError(
                        f"object {missing[0]!r} does not exist in the scene.",
                        ["choose a target from the scene object list"],
                    )
            return decision

        decision, convo = self._ask("plan", convo, parse)
        action = None
        if decision.verb == "start":
            failures = 0
            while True:
                try:
                    action = self.compile_action(decision.caption, view, existing)
                    break
                except MergeConflictError as exc:
                    failures += 1
                    if failures > self.reflection_budget:
                        raise StageFailure("plan: conflicts exhausted reflection budget")
                    ongoing = existing[0].caption if existing else "the current action"
                    feedback = LogicError(
                        ConflictReport(True, exc.report.reasons).message(
                            ongoing, decision.caption
                        ),
                        [f'stop "{ongoing}"', "try another action"],
                    )
                    convo = reflect(feedback, convo)
                    decision, convo = self._ask("plan", convo, parse)
                    if decision.verb != "start":
                        action = None
                        break
        self.conversation = convo
        return decision, action

    # -- stage 1: attribute analysis -----------------------------------------

    def analyze_attributes(self, caption: str, view: AgentView) -> MotionAttributes:
        marked, found = mark_objects(caption, self.scene)
        if not found:
            # target-less (Type-V) action: caption-only command
            return MotionAttributes(caption=caption)

        votes = []
        for instance in range(VOTING_INSTANCES):
            roles_convo = render_template(
                "attribute_roles",
                {"instance_id": f"instance {instance}", "caption": marked},
            )
            roles, _ = self._ask(f"roles[{instance}]", roles_convo,
                                 lambda t: self._parse_roles(t, found))
            details_convo = render_template(
                "attribute_motion",
                {
                    "instance_id": f"instance {instance}",
                    "caption": marked,
                    "agent_state": view.holding_text(),
                },
            )
            details, _ = self._ask(f"details[{instance}]", details_convo,
                                   self._parse_details)
            votes.append({**roles, **details})
        winner = majority_vote(votes)
        target = winner.get("target")
        at = winner.get("at")
        return MotionAttributes(
            caption=caption,
            target_id=target,
            anchor_id=at or target,
            tool_id=winner.get("by"),
            kind=winner["kind"],
            key_joints=tuple(winner["key_joints"]),
            use_ik=bool(winner["use_ik"]),
        )

    def _parse_roles(self, text: str, found: list[str]) -> dict:
        out: dict = {}
        for role in ("target", "by", "at"):
            m = re.search(rf"^\s*{role}\s*:\s*(.+)$", text, re.MULTILINE)
            if not m:
                continue
            ids = re.findall(r"<([^<>]+)>", m.group(1))
            if not ids:
                continue
            if role == "target":
                out["target"] = ids[0]
            else:
                out[role] = ids[0]
        if "target" not in out:
            raise FormatError("no target role in answer")
        for role, obj_id in out.items():
            if not self.scene.has(obj_id):
                raise LogicError(
                    f"object {obj_id!r} does not exist in the scene.",
                    ["use one of the marked object names"],
                )
        return out

    def _parse_details(self, text: str) -> dict:
        m = re.search(r"Interaction Type\s*:\s*([\w -]+)", text)
        if not m:
            raise FormatError("missing Interaction Type")
        raw_kind = m.group(1).strip().lower().replace(" ", "-")
        kind = _KIND_ALIASES.get(raw_kind)
        if kind is None:
            raise FormatError(f"unknown interaction type {m.group(1).strip()!r}")
        m = re.search(r"Key Joints\s*:\s*\[([^\]]*)\]", text)
        if not m:
            raise FormatError("missing Key Joints")
        joints = tuple(
            j.strip().strip("'\"") for j in m.group(1).split(",") if j.strip()
        )
        for j in joints:
            if j not in KEY_JOINTS:
                raise FormatError(f"unknown joint {j!r}")
        if len([j for j in joints if j != "head"]) > 2:
            raise FormatError("more than two contact joints")
        m = re.search(r"Use Inverse Kinematic\s*:\s*(true|false)", text, re.IGNORECASE)
        if not m:
            raise FormatError("missing Use Inverse Kinematic")
        return {"kind": kind, "key_joints": list(joints),
                "use_ik": m.group(1).lower() == "true"}

    # -- stage 2: pose reasoning -------------------------------------------------

    def reason_pose(self, attrs: MotionAttributes, view: AgentView) -> tuple[tuple[float, float], float]:
        anchor = self.scene.get(attrs.anchor_id)
        sheet = build_direction_labels(anchor, self.scene, stand_points=not attrs.distal)
        meaning = "direction" if attrs.distal else "standing location"
        convo = render_template(
            "direction_select",
            {
                "anchor": anchor.id,
                "label_meaning": meaning,
                "label_descriptions": "\n" + sheet.description_text(),
                "caption": attrs.caption,
            },
            images={0: list(self._bev_image(markers=[l.point for l in sheet.labels]))},
        )
        choice, _ = self._ask(
            "direction", convo, lambda t: sheet.get(self._parse_index(t))
        )

        if attrs.distal:
            ladder = build_distance_labels(anchor, self.scene, choice)
            convo = render_template(
                "distance_select",
                {
                    "target": attrs.target_id or anchor.id,
                    "scene_description": scene_description(self.scene),
                    "label_descriptions": "\nThe distance to the "
                    + (attrs.target_id or anchor.id) + " is:\n"
                    + ladder.description_text(),
                    "caption": attrs.caption,
                },
                images={0: list(self._bev_image(markers=[l.point for l in ladder.labels]))},
            )
            rung, _ = self._ask(
                "distance", convo, lambda t: ladder.get(self._parse_index(t))
            )
            location = rung.point
        else:
            location = choice.point

        arrows = build_facing_labels(anchor, location)
        convo = render_template(
            "facing_select",
            {
                "target": attrs.target_id or anchor.id,
                "scene_description": scene_description(self.scene),
                "label_descriptions": arrows.description_text(),
                "caption": attrs.caption,
            },
            images={0: list(self._bev_image()) if attrs.distal else []},
        )
        arrow, _ = self._ask(
            "facing", convo, lambda t: arrows.get(self._parse_index(t))
        )
        return location, arrow.angle

    @staticmethod
    def _parse_index(text: str) -> int:
        payload = extract_delimited(text)
        try:
            return int(payload)
        except ValueError:
            raise FormatError(f"label index {payload!r} is not an integer") from None

    # -- stage 3: key joint generation ------------------------------------------

    def generate_joint_targets(
        self, attrs: MotionAttributes, pose: tuple[tuple[float, float], float],
    ) -> tuple[dict[str, tuple[float, float, float]], frozenset[str]]:
        if not attrs.key_joints:
            return {}, frozenset()
        grid_obj = self.scene.get(attrs.target_id or attrs.anchor_id)
        lo, hi = grid_obj.world_aabb()
        center = object_center(grid_obj)
        if bool(np.all(hi - lo < SMALL_OBJECT_EXTENT)):
            targets = {
                j: tuple(float(c) for c in center) for j in attrs.key_joints
            }
            force = frozenset(
                attrs.key_joints if attrs.kind in ("contact", "manipulate") else ()
            )
            return targets, force

        location, facing = pose
        agent_pose = Pose2(location[0], location[1], facing)
        grid = joint_grid(grid_obj, agent_pose)
        targets: dict[str, tuple[float, float, float]] = {}
        force: set[str] = set()
        for joint in attrs.key_joints:
            if attrs.kind in ("contact", "manipulate"):
                convo = render_template(
                    "joint_target_contact",
                    {
                        "view_direction": grid.face,
                        "target": grid_obj.id,
                        "caption": attrs.caption,
                        "joint": joint,
                    },
                )
                (label, exert), _ = self._ask(
                    f"joint[{joint}]", convo, self._parse_contact_answer
                )
                point = grid.point(label)
                if exert:
                    targets[joint] = tuple(float(c) for c in center)
                    force.add(joint)
                else:
                    targets[joint] = tuple(float(c) for c in point)
            else:
                convo = render_template(
                    "joint_target",
                    {
                        "view_direction": grid.face,
                        "target": grid_obj.id,
                        "caption": attrs.caption,
                        "joint": joint,
                    },
                )
                (label, direction, dist), _ = self._ask(
                    f"joint[{joint}]", convo, self._parse_offset_answer
                )
                point = grid.point(label)
                vec = resolve_grid_direction(direction, grid, center, point)
                tgt = point + dist * vec
                targets[joint] = tuple(float(c) for c in tgt)
        return targets, frozenset(force)

    @staticmethod
    def _parse_offset_answer(text: str) -> tuple[int, str, float]:
        label = re.search(r"Label\s*:\s*(\d+)", text)
        direction = re.search(r"Direction\s*:\s*([a-z ]+)", text, re.IGNORECASE)
        dist = re.search(r"Distance\s*:\s*(-?[\d.]+)\s*m?", text)
        if not (label and direction and dist):
            raise FormatError("joint answer needs Label, Direction and Distance")
        d = float(dist.group(1))
        if d < 0:
            raise LogicError("distance must be non-negative.", ["give a distance >= 0"])
        name = direction.group(1).strip().lower()
        if name not in JOINT_DIRECTIONS:
            raise FormatError(f"direction {name!r} not in the predefined set")
        return int(label.group(1)), name, d

    @staticmethod
    def _parse_contact_answer(text: str) -> tuple[int, bool]:
        label = re.search(r"Label\s*:\s*(\d+)", text)
        force = re.search(r"Exert Force\s*:\s*(true|false)", text, re.IGNORECASE)
        if not (label and force):
            raise FormatError("contact answer needs Label and Exert Force")
        return int(label.group(1)), force.group(1).lower() == "true"

    # -- full action compilation ---------------------------------------------------

    def compile_action(self, caption: str, view: AgentView,
                       existing: list[MotionAttributes]) -> CompiledAction:
        attrs = self.analyze_attributes(caption, view)
        for prior in existing:
            report = detect_conflicts(self.scene, prior, attrs)
            if report.conflict:
                raise MergeConflictError(report)
        if not attrs.interactive:
            return CompiledAction(command=Command(caption=caption), attrs=attrs)
        location, facing = self.reason_pose(attrs, view)
        targets, force = self.generate_joint_targets(attrs, (location, facing))
        command = Command(
            caption=caption, location=location, facing=facing, joint_targets=targets,
        )
        return CompiledAction(command=command, attrs=attrs, force_joints=force)
