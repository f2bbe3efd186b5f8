// Canvas BEV rendering. Drawing goes through the small Canvas2DLike surface
// so tests can record calls without a real canvas.

import { ViewState } from "./state.js";

export interface Canvas2DLike {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  fill(): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  setLineDash(segments: number[]): void;
  clearRect(x: number, y: number, w: number, h: number): void;
}

export interface Viewport {
  width: number;
  height: number;
}

export interface Mapping {
  scale: number;
  offsetX: number;
  offsetY: number;
}

export const STYLE = {
  floor: "#dcd6c8",
  object: "#7a7468",
  front: "#4a8fd4",
  agent: "#b03030",
  plan: "#2d7a2d",
  preview: "#8a5fc0",
  goal: "#d49a2a",
};

/** World->pixel mapping that fits the floor into the viewport, y flipped. */
export function fitMapping(floor: [number, number][], view: Viewport): Mapping {
  const xs = floor.map((p) => p[0]);
  const ys = floor.map((p) => p[1]);
  const minX = Math.min(...xs);
  const maxX = Math.max(...xs);
  const minY = Math.min(...ys);
  const maxY = Math.max(...ys);
  const margin = 12;
  const scale = Math.min(
    (view.width - 2 * margin) / Math.max(maxX - minX, 1e-9),
    (view.height - 2 * margin) / Math.max(maxY - minY, 1e-9),
  );
  return {
    scale,
    offsetX: margin - minX * scale,
    offsetY: view.height - margin + minY * scale,
  };
}

export function toPixel(m: Mapping, x: number, y: number): [number, number] {
  return [x * m.scale + m.offsetX, m.offsetY - y * m.scale];
}

function polygon(ctx: Canvas2DLike, m: Mapping, pts: [number, number][]): void {
  if (pts.length === 0) return;
  ctx.beginPath();
  const [x0, y0] = toPixel(m, pts[0][0], pts[0][1]);
  ctx.moveTo(x0, y0);
  for (const [x, y] of pts.slice(1)) {
    const [px, py] = toPixel(m, x, y);
    ctx.lineTo(px, py);
  }
  ctx.closePath();
}

export function polyline(
  ctx: Canvas2DLike, m: Mapping, pts: [number, number][],
  color: string, dashed: boolean,
): void {
  if (pts.length < 2) return;
  ctx.setLineDash(dashed ? [6, 4] : []);
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  ctx.beginPath();
  const [x0, y0] = toPixel(m, pts[0][0], pts[0][1]);
  ctx.moveTo(x0, y0);
  for (const [x, y] of pts.slice(1)) {
    const [px, py] = toPixel(m, x, y);
    ctx.lineTo(px, py);
  }
  ctx.stroke();
  ctx.setLineDash([]);
}

/** Draw floor, object footprints, agent pose arrow, both plan polylines, and
 * the goal marker. Degrades to an empty canvas when no scene is cached. */
export function renderBev(ctx: Canvas2DLike, view: Viewport, state: ViewState): void {
  ctx.clearRect(0, 0, view.width, view.height);
  if (!state.scene) return;
  const m = fitMapping(state.scene.floor, view);

  ctx.fillStyle = STYLE.floor;
  polygon(ctx, m, state.scene.floor);
  ctx.fill();

  for (const obj of state.scene.objects) {
    ctx.fillStyle = STYLE.object;
    for (const ring of obj.outline) {
      polygon(ctx, m, ring);
      ctx.fill();
    }
    if (obj.front) {
      const tip: [number, number] = [
        obj.center[0] + obj.front[0] * 0.4,
        obj.center[1] + obj.front[1] * 0.4,
      ];
      polyline(ctx, m, [obj.center, tip], STYLE.front, false);
    }
  }

  // active plan solid, preview dashed: visually distinct by construction
  polyline(ctx, m, state.activePlan, STYLE.plan, false);
  polyline(ctx, m, state.previewPlan, STYLE.preview, true);

  if (state.goal) {
    const [gx, gy] = toPixel(m, state.goal[0], state.goal[1]);
    ctx.fillStyle = STYLE.goal;
    ctx.beginPath();
    ctx.arc(gx, gy, 5, 0, Math.PI * 2);
    ctx.fill();
  }

  if (state.pose) {
    const [x, y, facing] = state.pose;
    const [px, py] = toPixel(m, x, y);
    ctx.fillStyle = STYLE.agent;
    ctx.beginPath();
    ctx.arc(px, py, 6, 0, Math.PI * 2);
    ctx.fill();
    const tip: [number, number] = [
      x + Math.cos(facing) * 0.35,
      y + Math.sin(facing) * 0.35,
    ];
    polyline(ctx, m, [[x, y], tip], STYLE.agent, false);
  }
}
