// Wire protocol v1: every message is {"v":"v1","kind":...,"seq":n,"payload":{...}}
// carried as UTF-8 JSON text over WebSocket (or length-prefixed TCP server-side).

export const WIRE_VERSION = "v1";

export type MessageKind =
  | "instruction"
  | "frame"
  | "plan"
  | "agent_state"
  | "command"
  | "metrics"
  | "error";

export interface WireMessage {
  v: string;
  kind: MessageKind;
  seq: number;
  payload: Record<string, unknown>;
}

export interface FramePayload {
  frame: number;
  pose: [number, number, number];
  joints: Record<string, [number, number, number]>;
  speed: number | null;
  caption: string;
}

export interface PlanPayload {
  waypoints: [number, number][];
  preview: boolean;
  goal: [number, number] | null;
}

export interface MissionGoal {
  pattern: string;
  kind: string;
  done: boolean;
  resolved: string | null;
}

export interface MissionPayload {
  groups: MissionGoal[][];
  current: number;
  done: boolean;
}

export interface SceneObject {
  id: string;
  category: string;
  outline: [number, number][][];
  center: [number, number];
  front: [number, number] | null;
}

export interface ScenePayload {
  floor: [number, number][];
  objects: SceneObject[];
}

export interface AgentStatePayload {
  state: string;
  active: { caption: string; elapsed: number; done: boolean }[];
  mission: MissionPayload;
  scene?: ScenePayload;
}

const KINDS: ReadonlySet<string> = new Set([
  "instruction", "frame", "plan", "agent_state", "command", "metrics", "error",
]);

/** Parse one wire line; null for anything that is not a valid v1 message. */
export function parseMessage(raw: string): WireMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const msg = doc as Record<string, unknown>;
  if (msg.v !== WIRE_VERSION) return null;
  if (typeof msg.kind !== "string" || !KINDS.has(msg.kind)) return null;
  if (typeof msg.seq !== "number") return null;
  const payload = msg.payload;
  if (typeof payload !== "object" || payload === null) return null;
  return {
    v: WIRE_VERSION,
    kind: msg.kind as MessageKind,
    seq: msg.seq,
    payload: payload as Record<string, unknown>,
  };
}

export function instructionMessage(
  text: string,
  preview: boolean,
  seq: number,
): WireMessage {
  return {
    v: WIRE_VERSION,
    kind: "instruction",
    seq,
    payload: { text, preview },
  };
}
