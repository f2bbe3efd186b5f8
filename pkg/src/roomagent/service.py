"""Live-steering service.

One simulation loop thread owns the episode; connection handlers exchange
messages with it through queues only. Transport is length-prefixed JSON over
TCP (4-byte big-endian length, UTF-8 payload), with an in-process minimal
WebSocket upgrade for browser clients carrying identical payload bytes.
Every message is {"v": "v1", "kind": ..., "seq": n, "payload": {...}}; seq is
strictly increasing per connection.
"""

from __future__ import annotations

import base64
import hashlib
import json
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

WIRE_VERSION = "v1"
MESSAGE_KINDS = (
    "instruction", "frame", "plan", "agent_state", "command", "metrics", "error",
)
_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def make_message(kind: str, seq: int, payload: dict) -> dict:
    if kind not in MESSAGE_KINDS:
        raise ValueError(f"unknown message kind {kind!r}")
    return {"v": WIRE_VERSION, "kind": kind, "seq": seq, "payload": payload}


# ---------------------------------------------------------------------------
# framing


def send_framed(sock: socket.socket, payload: bytes):
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def recv_framed(sock: socket.socket) -> bytes | None:
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > 16 * 1024 * 1024:
        raise ConnectionError("oversized frame")
    return _recv_exact(sock, length)


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


# minimal RFC6455 server-side framing (text frames, no extensions)


def ws_accept_key(client_key: str) -> str:
    digest = hashlib.sha1((client_key + _WS_GUID).encode()).digest()
    return base64.b64encode(digest).decode()


def ws_send_text(sock: socket.socket, payload: bytes):
    header = bytearray([0x81])
    n = len(payload)
    if n < 126:
        header.append(n)
    elif n < 65536:
        header.append(126)
        header += struct.pack(">H", n)
    else:
        header.append(127)
        header += struct.pack(">Q", n)
    sock.sendall(bytes(header) + payload)


def ws_recv_text(sock: socket.socket) -> bytes | None:
    head = _recv_exact(sock, 2)
    if head is None:
        return None
    opcode = head[0] & 0x0F
    masked = head[1] & 0x80
    length = head[1] & 0x7F
    if length == 126:
        (length,) = struct.unpack(">H", _recv_exact(sock, 2))
    elif length == 127:
        (length,) = struct.unpack(">Q", _recv_exact(sock, 8))
    mask = _recv_exact(sock, 4) if masked else b"\x00" * 4
    data = _recv_exact(sock, length) if length else b""
    if data is None:
        return None
    if masked:
        data = bytes(b ^ mask[i % 4] for i, b in enumerate(data))
    if opcode == 0x8:  # close
        return None
    if opcode == 0x9:  # ping -> pong
        sock.sendall(bytes([0x8A, len(data)]) + data)
        return ws_recv_text(sock)
    return data


# ---------------------------------------------------------------------------
# connection bookkeeping


@dataclass
class _Client:
    sock: socket.socket
    send_text: object
    seq: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def send(self, kind: str, payload: dict):
        with self.lock:
            self.seq += 1
            msg = make_message(kind, self.seq, payload)
            data = json.dumps(msg, sort_keys=True).encode("utf-8")
            self.send_text(self.sock, data)


class SteeringService:
    """Bridges connections and the single simulation loop."""

    def __init__(self, runner, max_hz: float = 20.0):
        self.runner = runner
        self.clients: list[_Client] = []
        self.clients_lock = threading.Lock()
        self.inbox: queue.Queue = queue.Queue()
        self.max_hz = max_hz
        self.running = threading.Event()
        self.running.set()
        self._install_hooks()

    # -- simulation side -------------------------------------------------------

    def _install_hooks(self):
        runner = self.runner

        def on_frame(frame_idx, sim_frame, pose, window):
            self.broadcast("frame", {
                "frame": frame_idx,
                "pose": [round(pose.x, 4), round(pose.y, 4), round(pose.facing, 4)],
                "joints": {
                    name: [round(float(v), 4) for v in sim_frame.joints[j]]
                    for j, name in enumerate(_joint_names())
                },
                "speed": window.command.speed,
                "caption": window.command.caption,
            })
            if window.plan is not None:
                self.broadcast("plan", {
                    "waypoints": [[round(x, 4), round(y, 4)] for x, y in window.plan.waypoints],
                    "preview": False,
                    "goal": list(window.plan.waypoints[-1]) if window.plan.waypoints else None,
                })
            self.broadcast("agent_state", {
                "state": runner.status.state.value,
                "active": [
                    {
                        "caption": a.command.caption,
                        "elapsed": a.elapsed(runner.status.frame),
                        "done": a.done,
                    }
                    for a in runner.status.active
                ],
                "mission": _mission_payload(runner),
            })
            time.sleep(max(0.0, 1.0 / self.max_hz - 0.0))

        runner.on_frame = on_frame

    def loop(self, max_frames: int | None = None):
        """Run the episode loop, draining steering messages at window
        boundaries (planner-invocation boundaries per the control design)."""
        runner = self.runner
        limit = max_frames or runner.config.max_frames
        while self.running.is_set() and runner.status.frame < limit:
            self._drain_inbox()
            if runner._should_plan():
                runner._invoke_planner()
            window = runner.fsm.step(runner.status, runner.sim_state.object_positions)
            runner._execute_window(window)

    def _drain_inbox(self):
        while True:
            try:
                client, msg = self.inbox.get_nowait()
            except queue.Empty:
                return
            try:
                self._handle(client, msg)
            except Exception as exc:  # malformed message: report, keep alive
                client.send("error", {"message": str(exc)})

    def _handle(self, client: _Client, msg: dict):
        if not isinstance(msg, dict) or msg.get("v") != WIRE_VERSION:
            raise ValueError("message must carry v=v1")
        kind = msg.get("kind")
        payload = msg.get("payload") or {}
        if kind != "instruction":
            raise ValueError(f"clients may only send instruction messages, got {kind!r}")
        text = payload.get("text", "")
        if not isinstance(text, str) or not text:
            raise ValueError("instruction payload needs non-empty text")
        if payload.get("preview"):
            self._preview(client, text)
        else:
            self.runner.submit_instruction(text)
            client.send("command", {"accepted": text})

    def _preview(self, client: _Client, text: str):
        """Plan the path a hypothetical instruction would take, without
        touching the episode state."""
        from .navigation import plan_world
        from .scripted import plan_from_instruction

        runner = self.runner
        groups = plan_from_instruction(text, runner.scene)
        if not groups:
            client.send("plan", {"waypoints": [], "preview": True, "goal": None})
            return
        _, target_id = groups[0][0]
        obj = runner.scene.get(target_id)
        from .compiler import object_center

        goal = object_center(obj)[:2]
        approach = np.asarray(tuple(runner.status.pose.xy)) - goal
        from .navigation import ObstacleMap

        # preview must not mutate episode state; plan on a copy of the map
        scratch = ObstacleMap(
            obstacle=runner.omap.obstacle.copy(),
            meters_per_pixel=runner.omap.meters_per_pixel,
            origin=runner.omap.origin,
            distance=runner.omap.distance.copy(),
            obstacle_polygons=list(runner.omap.obstacle_polygons),
        )
        try:
            path = plan_world(
                scratch, runner.params, tuple(runner.status.pose.xy),
                tuple(goal), tuple(approach),
            )
            waypoints = [[round(x, 4), round(y, 4)] for x, y in path.waypoints]
        except Exception:
            waypoints = []
        client.send("plan", {
            "waypoints": waypoints, "preview": True,
            "goal": [round(float(goal[0]), 4), round(float(goal[1]), 4)],
        })

    # -- network side ----------------------------------------------------------

    def broadcast(self, kind: str, payload: dict):
        with self.clients_lock:
            clients = list(self.clients)
        for client in clients:
            try:
                client.send(kind, payload)
            except OSError:
                self._drop(client)

    def _drop(self, client: _Client):
        with self.clients_lock:
            if client in self.clients:
                self.clients.remove(client)
        try:
            client.sock.close()
        except OSError:
            pass

    def attach(self, sock: socket.socket):
        """Serve one accepted socket: sniff WebSocket vs raw framing, register
        the client, forward inbound messages to the simulation loop. Browsers
        send their HTTP upgrade immediately; a silent client is raw TCP."""
        sock.settimeout(0.25)
        try:
            first = sock.recv(4, socket.MSG_PEEK)
        except socket.timeout:
            first = b""
        sock.settimeout(None)
        if first.startswith(b"GET "):
            self._ws_handshake(sock)
            client = _Client(sock=sock, send_text=ws_send_text)
            recv = ws_recv_text
        else:
            client = _Client(sock=sock, send_text=send_framed)
            recv = recv_framed
        with self.clients_lock:
            self.clients.append(client)
        self._send_scene(client)
        try:
            while self.running.is_set():
                data = recv(sock)
                if data is None:
                    break
                try:
                    msg = json.loads(data.decode("utf-8"))
                except json.JSONDecodeError as exc:
                    client.send("error", {"message": f"bad JSON: {exc}"})
                    continue
                self.inbox.put((client, msg))
        finally:
            self._drop(client)

    @staticmethod
    def _ws_handshake(sock: socket.socket):
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = sock.recv(4096)
            if not chunk:
                raise ConnectionError("handshake aborted")
            data += chunk
        headers = {}
        for line in data.decode("latin1").split("\r\n")[1:]:
            if ":" in line:
                k, v = line.split(":", 1)
                headers[k.strip().lower()] = v.strip()
        key = headers.get("sec-websocket-key")
        if not key:
            raise ConnectionError("missing websocket key")
        resp = (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\n"
            "Connection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {ws_accept_key(key)}\r\n\r\n"
        )
        sock.sendall(resp.encode("latin1"))

    def _send_scene(self, client: _Client):
        scene = self.runner.scene
        from .compiler import object_center
        from .scene import footprint

        objects = []
        for obj in scene.objects:
            outline = footprint(obj)
            coords = []
            geoms = getattr(outline, "geoms", [outline])
            for g in geoms:
                coords.append([[round(x, 4), round(y, 4)] for x, y in g.exterior.coords])
            center = object_center(obj)
            objects.append({
                "id": obj.id,
                "category": obj.category,
                "outline": coords,
                "center": [round(float(center[0]), 4), round(float(center[1]), 4)],
                "front": list(obj.front_direction) if obj.front_direction else None,
            })
        client.send("agent_state", {
            "state": self.runner.status.state.value,
            "scene": {
                "floor": [[float(x), float(y)] for x, y in scene.floor],
                "objects": objects,
            },
            "active": [],
            "mission": _mission_payload(self.runner),
        })


def _joint_names():
    from .motion.frames import JOINTS

    return JOINTS


def _mission_payload(runner) -> dict:
    if runner.progress is None:
        return {"groups": [], "current": 0, "done": True}
    groups = []
    for gi, group in enumerate(runner.progress.goal_states):
        groups.append([
            {
                "pattern": st.goal.target_pattern,
                "kind": st.goal.kind,
                "done": st.done,
                "resolved": st.resolved_id,
            }
            for st in group
        ])
    return {
        "groups": groups,
        "current": runner.progress.current_group_index,
        "done": runner.progress.done,
    }


def serve(port: int, scene_path, backend, weights=None, seed: int = 0,
          max_frames: int | None = None, ready_event: threading.Event | None = None,
          stop_event: threading.Event | None = None):
    """Blocking server entry: one simulation loop, many connections."""
    from .episode import EpisodeConfig, EpisodeRunner
    from .motion.executor import MotionExecutor
    from .scene import load_scene

    scene = load_scene(scene_path)
    if backend is None:
        from .scripted import RuleAnswerer

        backend = RuleAnswerer(scene)
    executor = MotionExecutor.load(weights) if weights else MotionExecutor.create(seed=seed)
    runner = EpisodeRunner(
        scene, executor, backend,
        config=EpisodeConfig(seed=seed, max_frames=max_frames or 10**9),
    )
    runner.compiler.begin("await user instructions")
    service = SteeringService(runner)

    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind(("127.0.0.1", port))
    listener.listen(8)

    def accept_loop():
        while service.running.is_set():
            try:
                sock, _ = listener.accept()
            except OSError:
                break
            threading.Thread(target=service.attach, args=(sock,), daemon=True).start()

    acceptor = threading.Thread(target=accept_loop, daemon=True)
    acceptor.start()
    if ready_event is not None:
        ready_event.set()
    if stop_event is not None:
        def watch_stop():
            stop_event.wait()
            service.running.clear()

        threading.Thread(target=watch_stop, daemon=True).start()
    try:
        service.loop(max_frames)
    finally:
        service.running.clear()
        listener.close()
    return service
