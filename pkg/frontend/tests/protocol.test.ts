import { describe, expect, it } from "vitest";
import { instructionMessage, parseMessage } from "../src/protocol.js";

describe("parseMessage", () => {
  it("accepts a valid v1 frame message", () => {
    const msg = parseMessage(JSON.stringify({
      v: "v1", kind: "frame", seq: 3,
      payload: { frame: 1, pose: [0, 0, 0], joints: {}, speed: 1, caption: "x" },
    }));
    expect(msg).not.toBeNull();
    expect(msg!.kind).toBe("frame");
    expect(msg!.seq).toBe(3);
  });

  it("rejects wrong version", () => {
    expect(parseMessage(JSON.stringify({ v: "v2", kind: "frame", seq: 1, payload: {} })))
      .toBeNull();
  });

  it("rejects unknown kinds", () => {
    expect(parseMessage(JSON.stringify({ v: "v1", kind: "dance", seq: 1, payload: {} })))
      .toBeNull();
  });

  it("rejects malformed JSON", () => {
    expect(parseMessage("{nope")).toBeNull();
  });

  it("rejects missing payload", () => {
    expect(parseMessage(JSON.stringify({ v: "v1", kind: "frame", seq: 1 }))).toBeNull();
  });

  it("builds instruction messages", () => {
    const msg = instructionMessage("sit on sofa1", true, 7);
    expect(msg.payload).toEqual({ text: "sit on sofa1", preview: true });
    expect(msg.kind).toBe("instruction");
    expect(msg.seq).toBe(7);
  });
});
