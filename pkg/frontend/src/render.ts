/** Canvas heatmap renderer.
 *
 * A frame is a pure function of (server snapshot, scene handles): per-triangle
 * flat shading by the mean of the three vertex values, then the editable
 * handles drawn on top — obstacles as outlined circles, sources as small
 * dashed rings. No physics happens here; values arrive from the service.
 */

import { colorFor } from "./colormap.js";
import type { ObstacleHandle, SourceHandle } from "./scene.js";

/** Mesh geometry as delivered by the session response. */
export interface FrameGeometry {
  x: number[];
  y: number[];
  /** Flat triangle list: three vertex indices per element. */
  elements: number[];
}

export interface Handles {
  obstacles: ObstacleHandle[];
  sources: SourceHandle[];
}

/** The slice of CanvasRenderingContext2D the renderer uses. Kept structural
 * so tests can record draw calls without a DOM. */
export interface Draw2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  fill(): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  setLineDash(segments: number[]): void;
}

const WORLD_MIN = -1;
const WORLD_MAX = 1;
const SOURCE_MARKER_RADIUS = 0.06;

export interface Viewport {
  width: number;
  height: number;
}

/** World [-1,1]^2 to pixel coordinates, y up. */
export function worldToCanvas(
  vp: Viewport,
  wx: number,
  wy: number,
): [number, number] {
  const sx = vp.width / (WORLD_MAX - WORLD_MIN);
  const sy = vp.height / (WORLD_MAX - WORLD_MIN);
  return [(wx - WORLD_MIN) * sx, vp.height - (wy - WORLD_MIN) * sy];
}

/** Pixel to world coordinates; inverse of worldToCanvas. */
export function canvasToWorld(
  vp: Viewport,
  px: number,
  py: number,
): [number, number] {
  const sx = vp.width / (WORLD_MAX - WORLD_MIN);
  const sy = vp.height / (WORLD_MAX - WORLD_MIN);
  return [px / sx + WORLD_MIN, (vp.height - py) / sy + WORLD_MIN];
}

/** Draw one frame. Returns false (leaving the previous frame untouched)
 * when the field length does not match the mesh. */
export function renderFrame(
  ctx: Draw2D,
  vp: Viewport,
  geom: FrameGeometry,
  field: number[],
  handles: Handles,
): boolean {
  const n = geom.x.length;
  if (field.length !== n || geom.y.length !== n) {
    console.error(
      `render_frame: field length ${field.length} does not match mesh ` +
        `(${n} nodes); keeping previous frame`,
    );
    return false;
  }

  ctx.clearRect(0, 0, vp.width, vp.height);

  const px = new Array<number>(n);
  const py = new Array<number>(n);
  for (let i = 0; i < n; i++) {
    const [cx, cy] = worldToCanvas(vp, geom.x[i]!, geom.y[i]!);
    px[i] = cx;
    py[i] = cy;
  }

  ctx.setLineDash([]);
  ctx.lineWidth = 1;
  for (let e = 0; e + 2 < geom.elements.length; e += 3) {
    const a = geom.elements[e]!;
    const b = geom.elements[e + 1]!;
    const c = geom.elements[e + 2]!;
    const mean = (field[a]! + field[b]! + field[c]!) / 3;
    const color = colorFor(mean);
    ctx.fillStyle = color;
    ctx.strokeStyle = color;
    ctx.beginPath();
    ctx.moveTo(px[a]!, py[a]!);
    ctx.lineTo(px[b]!, py[b]!);
    ctx.lineTo(px[c]!, py[c]!);
    ctx.closePath();
    ctx.fill();
    // Restroke with the fill color to close antialiasing seams between
    // neighbouring triangles.
    ctx.stroke();
  }

  const scale = vp.width / (WORLD_MAX - WORLD_MIN);
  ctx.lineWidth = 2;
  ctx.strokeStyle = "#ffffff";
  for (const o of handles.obstacles) {
    const [cx, cy] = worldToCanvas(vp, o.cx, o.cy);
    ctx.beginPath();
    ctx.arc(cx, cy, o.radius * scale, 0, 2 * Math.PI);
    ctx.stroke();
  }

  ctx.setLineDash([4, 3]);
  ctx.lineWidth = 1.5;
  ctx.strokeStyle = "#ff8c00";
  for (const s of handles.sources) {
    const [cx, cy] = worldToCanvas(vp, s.cx, s.cy);
    ctx.beginPath();
    ctx.arc(cx, cy, SOURCE_MARKER_RADIUS * scale, 0, 2 * Math.PI);
    ctx.stroke();
  }
  ctx.setLineDash([]);

  return true;
}
