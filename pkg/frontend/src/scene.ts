/** Client-side scene state: the draggable obstacle and source handles.
 *
 * Every mutation clamps to the server's accepted ranges, so a body built
 * from this state is always valid — the UI never round-trips a 422 just to
 * learn that a drag went one pixel too far.
 */

import type { EnvBody } from "./api.js";

/** Accepted parameter ranges, mirroring the service's validation. */
export const RANGES = {
  center: [-0.8, 0.8],
  radius: [0.1, 0.3],
  amplitude: [0.0, 5.0],
  sharpness: [10.0, 50.0],
  maxObstacles: 4,
  maxSources: 4,
} as const;

export interface ObstacleHandle {
  cx: number;
  cy: number;
  radius: number;
}

export interface SourceHandle {
  cx: number;
  cy: number;
  amplitude: number;
  sharpness: number;
}

function clamp(v: number, lo: number, hi: number): number {
  if (!Number.isFinite(v)) return lo;
  return Math.min(hi, Math.max(lo, v));
}

const clampCenter = (v: number) => clamp(v, RANGES.center[0], RANGES.center[1]);
const clampRadius = (v: number) => clamp(v, RANGES.radius[0], RANGES.radius[1]);
const clampAmplitude = (v: number) =>
  clamp(v, RANGES.amplitude[0], RANGES.amplitude[1]);
const clampSharpness = (v: number) =>
  clamp(v, RANGES.sharpness[0], RANGES.sharpness[1]);

export class Scene {
  obstacles: ObstacleHandle[] = [];
  sources: SourceHandle[] = [];
  playing = false;
  /** Steps requested per second while playing. */
  stepRate = 10;

  /** Add an obstacle, clamped; returns its index, or -1 if at capacity. */
  addObstacle(cx: number, cy: number, radius = 0.15): number {
    if (this.obstacles.length >= RANGES.maxObstacles) return -1;
    this.obstacles.push({
      cx: clampCenter(cx),
      cy: clampCenter(cy),
      radius: clampRadius(radius),
    });
    return this.obstacles.length - 1;
  }

  /** Add a source, clamped; returns its index, or -1 if at capacity. */
  addSource(cx: number, cy: number, amplitude = 3.0, sharpness = 25.0): number {
    if (this.sources.length >= RANGES.maxSources) return -1;
    this.sources.push({
      cx: clampCenter(cx),
      cy: clampCenter(cy),
      amplitude: clampAmplitude(amplitude),
      sharpness: clampSharpness(sharpness),
    });
    return this.sources.length - 1;
  }

  moveObstacle(i: number, cx: number, cy: number): void {
    const o = this.obstacles[i];
    if (!o) return;
    o.cx = clampCenter(cx);
    o.cy = clampCenter(cy);
  }

  resizeObstacle(i: number, radius: number): void {
    const o = this.obstacles[i];
    if (!o) return;
    o.radius = clampRadius(radius);
  }

  moveSource(i: number, cx: number, cy: number): void {
    const s = this.sources[i];
    if (!s) return;
    s.cx = clampCenter(cx);
    s.cy = clampCenter(cy);
  }

  setSourceAmplitude(i: number, amplitude: number): void {
    const s = this.sources[i];
    if (!s) return;
    s.amplitude = clampAmplitude(amplitude);
  }

  setSourceSharpness(i: number, sharpness: number): void {
    const s = this.sources[i];
    if (!s) return;
    s.sharpness = clampSharpness(sharpness);
  }

  deleteObstacle(i: number): void {
    if (i >= 0 && i < this.obstacles.length) this.obstacles.splice(i, 1);
  }

  deleteSource(i: number): void {
    if (i >= 0 && i < this.sources.length) this.sources.splice(i, 1);
  }

  /** Snapshot the handles as a request body. Always within RANGES. */
  toBody(): EnvBody {
    return {
      obstacles: this.obstacles.map((o) => ({ ...o })),
      sources: this.sources.map((s) => ({ ...s })),
    };
  }
}
