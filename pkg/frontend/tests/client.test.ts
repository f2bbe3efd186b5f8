import { describe, expect, it } from "vitest";
import { SteeringClient, SteeringSocket } from "../src/client.js";
import { ViewEvent, initialState, reduce } from "../src/state.js";

class FakeSocket implements SteeringSocket {
  readyState = 0;
  sent: string[] = [];
  onopen: ((ev?: unknown) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: string }) => void) | null = null;
  send(data: string) { this.sent.push(data); }
  close() { this.readyState = 3; this.onclose?.(); }
  open() { this.readyState = 1; this.onopen?.(); }
}

function harness() {
  let state = initialState();
  const events: ViewEvent[] = [];
  const socket = new FakeSocket();
  const client = new SteeringClient((ev) => {
    events.push(ev);
    state = reduce(state, ev);
  }, () => socket);
  client.connect("ws://test");
  return {
    socket, client, events,
    get state() { return state; },
  };
}

describe("SteeringClient", () => {
  it("sends instructions when connected", () => {
    const h = harness();
    h.socket.open();
    h.client.submit("sit on sofa1", false);
    expect(h.socket.sent.length).toBe(1);
    const doc = JSON.parse(h.socket.sent[0]);
    expect(doc.kind).toBe("instruction");
    expect(doc.payload).toEqual({ text: "sit on sofa1", preview: false });
  });

  it("buffers while disconnected and flushes on open", () => {
    const h = harness();
    h.client.submit("watch tv1", false);
    expect(h.socket.sent.length).toBe(0);
    expect(h.client.bufferedCount).toBe(1);
    expect(h.state.history.length).toBe(1);   // visible in the history list
    h.socket.open();
    expect(h.socket.sent.length).toBe(1);
    expect(h.client.bufferedCount).toBe(0);
  });

  it("preview submissions disable further previews until the answer", () => {
    const h = harness();
    h.socket.open();
    h.client.submit("sit on sofa1", true);
    expect(h.state.pendingPreview).toBe(true);
    const preview = {
      v: "v1", kind: "plan", seq: 1,
      payload: { waypoints: [[0, 0], [1, 1]], preview: true, goal: null },
    };
    h.socket.onmessage?.({ data: JSON.stringify(preview) });
    expect(h.state.pendingPreview).toBe(false);
    expect(h.state.previewPlan.length).toBe(2);
  });

  it("connection status reaches the reducer", () => {
    const h = harness();
    expect(h.state.connection).toBe("connecting");
    h.socket.open();
    expect(h.state.connection).toBe("open");
    h.socket.close();
    expect(h.state.connection).toBe("closed");
  });

  it("garbage from the wire is ignored", () => {
    const h = harness();
    h.socket.open();
    h.socket.onmessage?.({ data: "{broken" });
    h.socket.onmessage?.({ data: JSON.stringify({ v: "v0", kind: "frame" }) });
    expect(h.state.frameCount).toBe(0);
  });
});
