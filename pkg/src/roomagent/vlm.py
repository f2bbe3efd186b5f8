"""Chat interface to a vision-language model.

Two backends share one contract: an HTTP backend speaking a model-agnostic
chat-completion JSON body, and a scripted backend that answers from on-disk
fixture files keyed by a digest of the rendered conversation, for offline and
deterministic test runs.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path


class VlmError(RuntimeError):
    pass


class TransportError(VlmError):
    """All retries exhausted against the remote endpoint."""


class FixtureMissingError(VlmError):
    """Scripted backend has no canned answer for the rendered conversation."""

    def __init__(self, digest: str, rendered: str):
        super().__init__(f"no scripted answer for digest {digest}")
        self.digest = digest
        self.rendered = rendered


class FormatError(VlmError):
    """Model answer does not follow the expected format."""


@dataclass(frozen=True)
class ImageAttachment:
    png: bytes
    caption: str = ""


@dataclass(frozen=True)
class ChatTurn:
    role: str  # system | user | assistant
    text: str = ""
    images: tuple[ImageAttachment, ...] = ()

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")
        if not self.text and not self.images:
            raise ValueError("turn needs text or images")


@dataclass(frozen=True)
class VlmBackendConfig:
    endpoint: str = ""
    model: str = "scripted"
    timeout_s: float = 60.0
    max_retries: int = 3
    temperature: float = 0.2

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.timeout_s <= 0:
            raise ValueError("timeout must be positive")


def render_conversation(history: list[ChatTurn] | tuple[ChatTurn, ...]) -> bytes:
    """Canonical byte rendering of a conversation, the scripted-digest input."""
    out = []
    for turn in history:
        out.append(f"[{turn.role}]\n{turn.text}\n".encode())
        for img in turn.images:
            h = hashlib.sha256(img.png).hexdigest()
            out.append(f"[image {h} {img.caption}]\n".encode())
    return b"".join(out)


def conversation_digest(history) -> str:
    return hashlib.sha256(render_conversation(history)).hexdigest()[:16]


class ScriptedBackend:
    """Answers from fixture files named <digest>.txt in a directory (and/or an
    in-memory mapping). A pure function of the rendered conversation bytes."""

    def __init__(self, fixtures_dir=None, answers: dict[str, str] | None = None):
        self.fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self.answers = dict(answers or {})
        self.log_missing = True

    def complete(self, history, config: VlmBackendConfig | None = None) -> str:
        if not history:
            raise VlmError("empty conversation")
        digest = conversation_digest(history)
        if digest in self.answers:
            return self.answers[digest]
        if self.fixtures_dir is not None:
            path = self.fixtures_dir / f"{digest}.txt"
            if path.exists():
                return path.read_text(encoding="utf-8")
            if self.log_missing:
                miss = self.fixtures_dir / f"{digest}.missing"
                miss.parent.mkdir(parents=True, exist_ok=True)
                miss.write_bytes(render_conversation(history))
        raise FixtureMissingError(digest, render_conversation(history).decode())


class HttpBackend:
    """Chat-completion HTTP backend with exponential-backoff retries
    (base 1 s, factor 2). `transport` and `sleep` are injectable for tests."""

    def __init__(self, config: VlmBackendConfig, transport=None, sleep=time.sleep):
        self.config = config
        self.transport = transport or self._default_transport
        self.sleep = sleep

    def _default_transport(self, body: dict) -> tuple[int, str]:
        import requests

        endpoint = self.config.endpoint or os.environ.get("ROOMAGENT_VLM_ENDPOINT", "")
        if not endpoint:
            raise VlmError("no endpoint configured (ROOMAGENT_VLM_ENDPOINT)")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get("ROOMAGENT_VLM_API_KEY")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        resp = requests.post(
            endpoint, json=body, headers=headers, timeout=self.config.timeout_s
        )
        return resp.status_code, resp.text

    @staticmethod
    def _wire_message(turn: ChatTurn) -> dict:
        content: list[dict] = []
        if turn.text:
            content.append({"type": "text", "text": turn.text})
        for img in turn.images:
            content.append(
                {
                    "type": "image_url",
                    "image_url": {
                        "url": "data:image/png;base64,"
                        + base64.b64encode(img.png).decode("ascii")
                    },
                    "caption": img.caption,
                }
            )
        return {"role": turn.role, "content": content}

    def complete(self, history, config: VlmBackendConfig | None = None) -> str:
        cfg = config or self.config
        if not history:
            raise VlmError("empty conversation")
        body = {
            "model": cfg.model,
            "temperature": cfg.temperature,
            "messages": [self._wire_message(t) for t in history],
        }
        last_err = None
        for attempt in range(cfg.max_retries + 1):
            try:
                status, text = self.transport(body)
            except Exception as exc:  # transport-level failure
                status, text, last_err = 0, "", exc
            else:
                if status == 200:
                    doc = json.loads(text)
                    return doc["choices"][0]["message"]["content"]
                last_err = VlmError(f"HTTP {status}")
            if attempt < cfg.max_retries:
                self.sleep(1.0 * (2.0 ** attempt))
        raise TransportError(f"retries exhausted: {last_err}")


def extract_delimited(text: str) -> str:
    """Payload between the LAST '>>>' and the following '<<<', trimmed."""
    start = text.rfind(">>>")
    if start < 0:
        raise FormatError("missing '>>>' delimiter")
    end = text.find("<<<", start + 3)
    if end < 0:
        raise FormatError("missing '<<<' delimiter")
    return text[start + 3:end].strip()


def _canonical(value):
    if isinstance(value, list):
        return tuple(_canonical(v) for v in value)
    return value


def majority_vote(answers: list[dict]) -> dict:
    """Per-field plurality over parsed answers; ties break by the earliest
    instance index holding a tied value."""
    if not answers:
        raise ValueError("need at least one answer")
    fields: list[str] = []
    for ans in answers:
        for key in ans:
            if key not in fields:
                fields.append(key)
    result = {}
    for key in fields:
        counts: dict = {}
        first_seen: dict = {}
        for idx, ans in enumerate(answers):
            if key not in ans:
                continue
            val = _canonical(ans[key])
            counts[val] = counts.get(val, 0) + 1
            first_seen.setdefault(val, idx)
        best = max(counts, key=lambda v: (counts[v], -first_seen[v]))
        winner_idx = first_seen[best]
        result[key] = answers[winner_idx][key]
    return result
