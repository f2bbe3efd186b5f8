// View-state reducer: network events fold into an immutable snapshot; the
// highest seq wins, previews never touch mission state, and replaying a
// recorded log reproduces the same final state.

import {
  AgentStatePayload, FramePayload, MissionPayload, PlanPayload, ScenePayload,
  WireMessage,
} from "./protocol.js";

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface InstructionEntry {
  text: string;
  preview: boolean;
  acknowledged: boolean;
}

export interface ViewState {
  connection: ConnectionStatus;
  lastSeq: number;
  scene: ScenePayload | null;
  pose: [number, number, number] | null;
  caption: string;
  fsmState: string;
  activePlan: [number, number][];
  previewPlan: [number, number][];
  goal: [number, number] | null;
  mission: MissionPayload;
  history: InstructionEntry[];
  pendingPreview: boolean;
  frameCount: number;
  ring: FramePayload[];       // short playback buffer
  lastError: string | null;
}

export const RING_CAPACITY = 60;

export function initialState(): ViewState {
  return {
    connection: "connecting",
    lastSeq: 0,
    scene: null,
    pose: null,
    caption: "",
    fsmState: "",
    activePlan: [],
    previewPlan: [],
    goal: null,
    mission: { groups: [], current: 0, done: false },
    history: [],
    pendingPreview: false,
    frameCount: 0,
    ring: [],
    lastError: null,
  };
}

export type ViewEvent =
  | { type: "connection"; status: ConnectionStatus }
  | { type: "message"; message: WireMessage }
  | { type: "submit"; text: string; preview: boolean };

export function reduce(state: ViewState, event: ViewEvent): ViewState {
  switch (event.type) {
    case "connection":
      return { ...state, connection: event.status };
    case "submit":
      return {
        ...state,
        pendingPreview: event.preview ? true : state.pendingPreview,
        history: [
          ...state.history,
          { text: event.text, preview: event.preview, acknowledged: false },
        ],
      };
    case "message":
      return applyMessage(state, event.message);
  }
}

function applyMessage(state: ViewState, msg: WireMessage): ViewState {
  // render reflects the highest seq received
  if (msg.seq <= state.lastSeq) return state;
  const next = { ...state, lastSeq: msg.seq };
  switch (msg.kind) {
    case "frame": {
      const frame = msg.payload as unknown as FramePayload;
      const ring = [...state.ring, frame];
      if (ring.length > RING_CAPACITY) ring.shift();
      return {
        ...next,
        pose: frame.pose,
        caption: frame.caption,
        frameCount: state.frameCount + 1,
        ring,
      };
    }
    case "plan": {
      const plan = msg.payload as unknown as PlanPayload;
      if (plan.preview) {
        // previews never mutate mission state or the active plan
        return { ...next, previewPlan: plan.waypoints, pendingPreview: false };
      }
      return { ...next, activePlan: plan.waypoints, goal: plan.goal };
    }
    case "agent_state": {
      const payload = msg.payload as unknown as AgentStatePayload;
      return {
        ...next,
        fsmState: payload.state,
        mission: payload.mission,
        scene: payload.scene ?? state.scene,
      };
    }
    case "command": {
      const accepted = String(msg.payload.accepted ?? "");
      const history = state.history.map((h) =>
        !h.acknowledged && h.text === accepted ? { ...h, acknowledged: true } : h,
      );
      return { ...next, history };
    }
    case "error":
      return { ...next, lastError: String(msg.payload.message ?? "error") };
    default:
      return next;
  }
}

/** Fold a recorded message log (one JSON line per message) into a state. */
export function replayLog(lines: string[], start?: ViewState): ViewState {
  let state = start ?? initialState();
  for (const line of lines) {
    if (!line.trim()) continue;
    const parsed = JSON.parse(line) as WireMessage;
    state = reduce(state, { type: "message", message: parsed });
  }
  return state;
}

export interface ChecklistRow {
  label: string;
  done: boolean;
  current: boolean;
}

/** Mission checklist rows in task-spec group order. */
export function checklist(state: ViewState): ChecklistRow[] {
  const rows: ChecklistRow[] = [];
  state.mission.groups.forEach((group, gi) => {
    for (const goal of group) {
      rows.push({
        label: `${goal.kind} ${goal.resolved ?? goal.pattern}`,
        done: goal.done,
        current: gi === state.mission.current && !state.mission.done,
      });
    }
  });
  return rows;
}
