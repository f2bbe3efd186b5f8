"""Record a live service session into the frontend replay fixtures.

Starts the steering service on a scratch port, connects a raw TCP client,
sends one instruction, captures every wire message to
frontend/tests/fixtures/episode_log.jsonl, and writes the reduced final state
(active plan, mission, frame count) to episode_final.json for the replay test
to compare against.
"""

import json
import socket
import struct
import sys
import threading
import time
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from roomagent.service import serve  # noqa: E402


def recv_msg(sock):
    header = sock.recv(4, socket.MSG_WAITALL)
    if len(header) < 4:
        return None
    (n,) = struct.unpack(">I", header)
    return sock.recv(n, socket.MSG_WAITALL)


def main():
    port = 18977
    ready = threading.Event()
    stop = threading.Event()
    thread = threading.Thread(
        target=serve,
        kwargs=dict(
            port=port, scene_path=REPO / "scenes" / "living_room.scene",
            backend=None, weights=REPO / "checkpoints" / "default.ckpt",
            seed=11, max_frames=100000, ready_event=ready, stop_event=stop,
        ),
        daemon=True,
    )
    thread.start()
    assert ready.wait(15)
    time.sleep(0.2)

    sock = socket.create_connection(("127.0.0.1", port), timeout=30)
    lines = []
    deadline = time.time() + 60
    sent = False
    frames = 0
    while time.time() < deadline and frames < 120:
        raw = recv_msg(sock)
        if raw is None:
            break
        lines.append(raw.decode("utf-8"))
        doc = json.loads(raw)
        if doc["kind"] == "frame":
            frames += 1
        if not sent and frames >= 2:
            payload = json.dumps({
                "v": "v1", "kind": "instruction", "seq": 1,
                "payload": {"text": "sit on sofa1"},
            }).encode()
            sock.sendall(struct.pack(">I", len(payload)) + payload)
            sent = True
    sock.close()
    stop.set()

    # reduce exactly like the frontend: last non-preview plan, last mission
    final_plan = []
    final_mission = {"groups": [], "current": 0, "done": False}
    frame_count = 0
    for line in lines:
        doc = json.loads(line)
        if doc["kind"] == "frame":
            frame_count += 1
        elif doc["kind"] == "plan" and not doc["payload"]["preview"]:
            final_plan = doc["payload"]["waypoints"]
        elif doc["kind"] == "agent_state":
            final_mission = doc["payload"]["mission"]

    out_dir = REPO / "frontend" / "tests" / "fixtures"
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "episode_log.jsonl").write_text("\n".join(lines) + "\n")
    (out_dir / "episode_final.json").write_text(json.dumps({
        "final_plan": final_plan,
        "final_mission": final_mission,
        "frame_count": frame_count,
    }, indent=2))
    print(f"recorded {len(lines)} messages, {frame_count} frames -> {out_dir}")


if __name__ == "__main__":
    main()
