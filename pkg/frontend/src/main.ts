// Browser entry: wires the reducer, client, canvas, and controls together.

import { SteeringClient } from "./client.js";
import { renderBev } from "./render.js";
import { ViewEvent, ViewState, checklist, initialState, reduce } from "./state.js";

let state: ViewState = initialState();

const canvas = document.getElementById("bev") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const statusEl = document.getElementById("status")!;
const missionEl = document.getElementById("mission")!;
const historyEl = document.getElementById("history")!;
const captionEl = document.getElementById("caption")!;
const input = document.getElementById("instruction") as HTMLInputElement;
const sendBtn = document.getElementById("send") as HTMLButtonElement;
const previewBtn = document.getElementById("preview") as HTMLButtonElement;

function dispatch(event: ViewEvent): void {
  state = reduce(state, event);
  requestAnimationFrame(draw);
}

const client = new SteeringClient(dispatch);
const host = location.hostname || "127.0.0.1";
const port = new URLSearchParams(location.search).get("port") ?? "8734";
client.connect(`ws://${host}:${port}`);

function draw(): void {
  renderBev(ctx, { width: canvas.width, height: canvas.height }, state);
  statusEl.textContent =
    `${state.connection} | ${state.fsmState || "-"} | frame ${state.frameCount}`
    + (state.lastError ? ` | error: ${state.lastError}` : "");
  captionEl.textContent = state.caption;

  missionEl.innerHTML = "";
  for (const row of checklist(state)) {
    const li = document.createElement("li");
    li.textContent = `${row.done ? "[done] " : row.current ? "[now] " : ""}${row.label}`;
    if (row.done) li.classList.add("done");
    if (row.current) li.classList.add("current");
    missionEl.appendChild(li);
  }

  historyEl.innerHTML = "";
  for (const entry of state.history.slice(-8)) {
    const li = document.createElement("li");
    li.textContent =
      `${entry.preview ? "(preview) " : ""}${entry.text}${entry.acknowledged ? "" : " ..."}`;
    historyEl.appendChild(li);
  }

  previewBtn.disabled = state.pendingPreview;
}

function submit(preview: boolean): void {
  const text = input.value.trim();
  if (!text) return;
  client.submit(text, preview);
  if (!preview) input.value = "";
  if (!client.connected) {
    statusEl.textContent = `offline: buffered ${client.bufferedCount} message(s)`;
  }
}

sendBtn.addEventListener("click", () => submit(false));
previewBtn.addEventListener("click", () => submit(true));
input.addEventListener("keydown", (ev) => {
  if (ev.key === "Enter") submit(ev.shiftKey);
});

draw();
