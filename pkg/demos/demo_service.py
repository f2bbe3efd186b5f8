"""Live steering over the wire: starts the service in-process, connects a raw
TCP client, previews a path, then commits the instruction and follows the
frame stream. The browser console in frontend/ speaks the same protocol over
WebSocket.
"""

import json
import socket
import struct
import threading
import time
from pathlib import Path

from roomagent.service import serve

REPO = Path(__file__).resolve().parent.parent
PORT = 8735


def recv(sock):
    header = sock.recv(4, socket.MSG_WAITALL)
    (n,) = struct.unpack(">I", header)
    return json.loads(sock.recv(n, socket.MSG_WAITALL).decode())


def send(sock, doc):
    payload = json.dumps(doc).encode()
    sock.sendall(struct.pack(">I", len(payload)) + payload)


def main():
    ready = threading.Event()
    stop = threading.Event()
    threading.Thread(
        target=serve,
        kwargs=dict(port=PORT, scene_path=REPO / "scenes" / "living_room.scene",
                    backend=None, weights=REPO / "checkpoints" / "default.ckpt",
                    seed=3, ready_event=ready, stop_event=stop),
        daemon=True,
    ).start()
    ready.wait(15)
    sock = socket.create_connection(("127.0.0.1", PORT), timeout=30)
    snapshot = recv(sock)
    print(f"scene snapshot: {len(snapshot['payload']['scene']['objects'])} objects")

    send(sock, {"v": "v1", "kind": "instruction", "seq": 1,
                "payload": {"text": "sit on sofa1", "preview": True}})
    send(sock, {"v": "v1", "kind": "instruction", "seq": 2,
                "payload": {"text": "sit on sofa1"}})

    t0 = time.time()
    frames = 0
    while time.time() - t0 < 12:
        msg = recv(sock)
        if msg["kind"] == "plan":
            tag = "preview" if msg["payload"]["preview"] else "active"
            print(f"{tag} plan: {msg['payload']['waypoints']}")
        elif msg["kind"] == "command":
            print(f"accepted: {msg['payload']['accepted']!r}")
        elif msg["kind"] == "frame":
            frames += 1
            if frames % 20 == 0:
                pose = msg["payload"]["pose"]
                print(f"frame {msg['payload']['frame']:4d} pose "
                      f"({pose[0]:+.2f}, {pose[1]:+.2f}, {pose[2]:+.2f}) "
                      f"caption {msg['payload']['caption']!r}")
    sock.close()
    stop.set()
    print(f"received {frames} frame messages")


if __name__ == "__main__":
    main()
