"""Geometry-driven answers for the compiler's prompts.

RuleAnswerer is a pure function of the rendered conversation: it recognizes
which VQA stage a prompt belongs to and answers using the scene, a mission
plan, and simple keyword rules. It stands in for a live model when authoring
scripted-backend fixture files (RecordingGateway wraps any gateway and dumps
digest->answer files) and when running episodes fully offline.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .scene import SceneModel
from .tasks import TaskSpec
from .vlm import ChatTurn, conversation_digest

CAPTION_TEMPLATES = {
    "sit": "Sitting on {target}.",
    "sleep": "Sleeping on {target}.",
    "touch": "Touching {target}.",
    "watch": "Watching {target}.",
    "lift": "Lifting {target}.",
}

DETAIL_ANSWERS = {
    "sit": ("contact", "['pelvis']", "false"),
    "sleep": ("contact", "['pelvis']", "false"),
    "touch": ("contact", "['right_hand']", "true"),
    "watch": ("long-range", "[]", "false"),
    "lift": ("manipulation", "['right_hand']", "true"),
}

_INSTRUCTION_KINDS = (
    ("sleep", ("sleep",)),
    ("sit", ("sit",)),
    ("watch", ("watch", "look at")),
    ("lift", ("lift", "carry", "pick up")),
    ("touch", ("touch", "turn on", "grab", "press", "take")),
)


def plan_from_task(task: TaskSpec, scene: SceneModel) -> list[list[tuple[str, str]]]:
    """Mission groups resolved to (kind, object id), consuming ids in order."""
    from .tasks import MissionProgress, resolve_pattern

    progress = MissionProgress(task)
    plan = []
    for group in task.mission:
        resolved = []
        for goal in group:
            target = resolve_pattern(goal.target_pattern, scene, progress)
            if not goal.starred:
                progress.consumed_object_ids.add(target)
            resolved.append((goal.kind, target))
        plan.append(resolved)
    return plan


def plan_from_instruction(text: str, scene: SceneModel) -> list[list[tuple[str, str]]]:
    """Keyword parse of a simple instruction into single-goal groups."""
    groups = []
    for clause in re.split(r"\bthen\b|\.|;", text.lower()):
        ids = [tok for tok in re.findall(r"\b([a-z]+\d+)\b", clause) if scene.has(tok)]
        if not ids:
            continue
        kind = None
        for name, keys in _INSTRUCTION_KINDS:
            if any(k in clause for k in keys):
                kind = name
                break
        if kind is None:
            continue
        groups.append([(kind, ids[0])])
    return groups


@dataclass
class RuleAnswerer:
    """Deterministic stand-in for the VLM; complete() depends only on the
    conversation content, so recorded fixtures replay consistently."""

    scene: SceneModel
    plan: list[list[tuple[str, str]]] | None = None

    # -- gateway interface ----------------------------------------------------

    def complete(self, history, config=None) -> str:
        text = history[-1].text
        system = history[0].text if history else ""
        if "identify the roles" in text:
            return self._answer_roles(text)
        if "Details:" in text and "Interaction:" in text:
            return self._answer_details(text)
        if "Marker Directions:" in text:
            return self._answer_direction(text)
        if "candidate standing locations" in text:
            return self._answer_distance(text)
        if "candidate facing directions" in text:
            return self._answer_facing(text)
        if "identify the contact of your" in text:
            return self._answer_contact(text)
        if "identify the target position of your" in text:
            return self._answer_offset(text)
        if text.startswith("Position:") or "\nState:" in text or "New instruction:" in text:
            return self._answer_plan(history, system)
        raise ValueError(f"rule answerer cannot classify prompt: {text[:80]!r}")

    # -- planning -------------------------------------------------------------

    def _mission(self, history, system) -> list[list[tuple[str, str]]]:
        if self.plan is not None:
            return self.plan
        texts = []
        m = re.search(r"step by step:\n\n(.*?)\n\nIn each step", system, re.DOTALL)
        if m:
            texts.append(m.group(1))
        for turn in history:
            if turn.role == "user" and turn.text.startswith("New instruction:"):
                texts.append(turn.text[len("New instruction:"):])
        plan = []
        for t in texts:
            plan.extend(plan_from_instruction(t, self.scene))
        return plan

    def _answer_plan(self, history, system) -> str:
        plan = self._mission(history, system)
        captions = [
            [CAPTION_TEMPLATES[kind].format(target=target) for kind, target in group]
            for group in plan
        ]
        started: list[str] = []
        stopped: list[str] = []
        for turn in history:
            if turn.role != "assistant":
                continue
            m = re.search(r"\b(start|stop)\(\"([^\"]*)\"\)", turn.text)
            if m and m.group(1) == "start":
                started.append(m.group(2))
            elif m:
                stopped.append(m.group(2))
        state_text = history[-1].text
        done = re.findall(r'\("([^"]+)", \d+s, done\)', state_text)
        for caption in done:
            if caption in started and caption not in stopped:
                return f'stop("{caption}")'
        active = [c for c in started if c not in stopped]
        for group in captions:
            remaining = [c for c in group if c not in started]
            unfinished = [c for c in group if c in active]
            if remaining:
                return f'start("{remaining[0]}")'
            if unfinished:
                return "skip()"
        return "skip()"

    # -- attribute stages ----------------------------------------------------------

    def _answer_roles(self, text: str) -> str:
        m = re.search(r"Sentence:\s*(.+)$", text, re.DOTALL)
        caption = m.group(1) if m else text
        ids = re.findall(r"<([^<>]+)>", caption)
        target = ids[0] if ids else ""
        lines = [f"    target: <{target}>"]
        if len(ids) > 1:
            if re.search(rf"from the <{re.escape(ids[1])}>|from <{re.escape(ids[1])}>", caption):
                lines.append(f"    at: <{ids[1]}>")
            elif re.search(rf"with the <{re.escape(ids[1])}>|by <{re.escape(ids[1])}>", caption):
                lines.append(f"    by: <{ids[1]}>")
            else:
                lines.append(f"    at: <{ids[1]}>")
        return "\n".join(lines)

    def _kind_of_caption(self, text: str) -> str:
        lowered = text.lower()
        for kind, keys in _INSTRUCTION_KINDS:
            if any(k in lowered for k in keys):
                return kind
        return "touch"

    def _answer_details(self, text: str) -> str:
        m = re.search(r"Interaction:\s*(.+)", text)
        caption = m.group(1) if m else text
        kind = self._kind_of_caption(caption)
        interaction, joints, ik = DETAIL_ANSWERS[kind]
        if kind in ("touch", "lift") and "holding" in text and "right hand" in text:
            joints = "['left_hand']"
        return (
            f"- Interaction Type: {interaction}\n\n"
            f"- Key Joints: {joints}\n\n"
            f"- Use Inverse Kinematic: {ik}"
        )

    # -- pose stages ------------------------------------------------------------------

    @staticmethod
    def _label_lines(text: str) -> list[str]:
        return re.findall(r"- (Label \d+[^\n]*)", text)

    def _answer_direction(self, text: str) -> str:
        labels = self._label_lines(text)
        pick = 1
        for line in labels:
            if "in the front of" in line:
                pick = int(re.search(r"Label (\d+)", line).group(1))
                break
        return f"The best spot is >>>{pick}<<<"

    def _answer_distance(self, text: str) -> str:
        best, best_err = 1, float("inf")
        for line in self._label_lines(text):
            m = re.search(r"Label (\d+) : ([\d.]+)m", line)
            if not m:
                continue
            err = abs(float(m.group(2)) - 1.5)
            if err < best_err:
                best, best_err = int(m.group(1)), err
        return f">>>{best}<<<"

    def _answer_facing(self, text: str) -> str:
        m = re.search(r"performing\s+(.+?), which direction", text, re.DOTALL)
        caption = (m.group(1) if m else "").lower()
        # sit down / lie down facing away from the object, otherwise face it
        if "sitting" in caption or "sleeping" in caption or "sit " in caption:
            return ">>>5<<<"
        return ">>>1<<<"

    # -- joint stage ----------------------------------------------------------------------

    def _answer_contact(self, text: str) -> str:
        return (
            "- Target Point: contact surface\n"
            "- Label: 28\n"
            "- Exert Force: true"
        )

    def _answer_offset(self, text: str) -> str:
        return (
            "- Target Point: surface center\n"
            "- Label: 28\n"
            "- Direction: toward the object center\n"
            "- Distance: 0.1"
        )


class RecordingGateway:
    """Wraps a gateway and writes every digest->answer pair to a directory of
    scripted-backend fixture files."""

    def __init__(self, inner, out_dir):
        self.inner = inner
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def complete(self, history, config=None) -> str:
        digest = conversation_digest(history)
        answer = self.inner.complete(history, config)
        (self.out_dir / f"{digest}.txt").write_text(answer, encoding="utf-8")
        return answer
