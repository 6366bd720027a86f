/** Browser entry point: wires the canvas, the controls, and the session loop.
 *
 * Interaction model: drag a handle to move it, scroll over it to resize
 * (obstacle radius / source amplitude), double-click to delete, toolbar
 * buttons to add. Every committed edit re-renders immediately from the last
 * snapshot (the handles are client state) and queues a debounced PUT; the
 * next frames then come from the edited environment.
 */

import { Api } from "./api.js";
import { SessionLoop } from "./loop.js";
import {
  canvasToWorld,
  renderFrame,
  type FrameGeometry,
  type Viewport,
} from "./render.js";
import { Scene } from "./scene.js";

const SOURCE_HIT_RADIUS = 0.08;

type Hit =
  | { kind: "obstacle"; index: number }
  | { kind: "source"; index: number }
  | null;

function hitTest(scene: Scene, wx: number, wy: number): Hit {
  // Sources are drawn on top, so test them first.
  for (let i = scene.sources.length - 1; i >= 0; i--) {
    const s = scene.sources[i]!;
    if (Math.hypot(wx - s.cx, wy - s.cy) <= SOURCE_HIT_RADIUS) {
      return { kind: "source", index: i };
    }
  }
  for (let i = scene.obstacles.length - 1; i >= 0; i--) {
    const o = scene.obstacles[i]!;
    if (Math.hypot(wx - o.cx, wy - o.cy) <= o.radius) {
      return { kind: "obstacle", index: i };
    }
  }
  return null;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showToast(message: string): void {
  const host = el<HTMLDivElement>("toasts");
  const div = document.createElement("div");
  div.className = "toast";
  div.textContent = message;
  host.appendChild(div);
  setTimeout(() => div.remove(), 4000);
}

async function boot(): Promise<void> {
  const canvas = el<HTMLCanvasElement>("view");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unsupported");
  const vp: Viewport = { width: canvas.width, height: canvas.height };

  const baseUrl =
    new URLSearchParams(location.search).get("api") ?? "http://127.0.0.1:8000";
  const api = new Api(baseUrl);

  const scene = new Scene();
  scene.addSource(0.0, 0.0);
  scene.addObstacle(0.45, 0.3);

  const created = await api.createSession(scene.toBody());
  const geom: FrameGeometry = { x: created.x, y: created.y, elements: created.elements };

  let lastField = created.u;
  let stepCount = created.step;

  const status = el<HTMLSpanElement>("status");
  const draw = () => {
    renderFrame(ctx, vp, geom, lastField, scene);
    status.textContent = `session ${created.session_id} · step ${stepCount} · ${
      scene.obstacles.length
    } obstacle(s), ${scene.sources.length} source(s)`;
  };

  const loop = new SessionLoop(api, created.session_id, {
    onFrame(field, _nodeTypes, step) {
      lastField = field;
      stepCount = step;
      draw();
    },
    onToast: showToast,
    onErrorPause(message) {
      showToast(`server error — paused (${message})`);
      syncPlayButton();
    },
  });

  const playBtn = el<HTMLButtonElement>("play");
  const syncPlayButton = () => {
    scene.playing = loop.playing;
    playBtn.textContent = loop.playing ? "pause" : "play";
  };
  playBtn.addEventListener("click", () => {
    if (loop.playing) loop.pause();
    else loop.play();
    syncPlayButton();
  });

  let timer: ReturnType<typeof setInterval> | null = null;
  const restartTimer = () => {
    if (timer !== null) clearInterval(timer);
    timer = setInterval(() => loop.tick(), 1000 / scene.stepRate);
  };
  const rate = el<HTMLInputElement>("rate");
  rate.value = String(scene.stepRate);
  rate.addEventListener("input", () => {
    scene.stepRate = Math.max(1, Number(rate.value) || 1);
    restartTimer();
  });
  restartTimer();

  const commit = () => {
    draw();
    loop.queueEdit(scene.toBody());
  };

  el<HTMLButtonElement>("add-obstacle").addEventListener("click", () => {
    const i = scene.addObstacle(-0.4 + 0.2 * scene.obstacles.length, -0.4);
    if (i < 0) showToast("obstacle limit reached (4)");
    else commit();
  });
  el<HTMLButtonElement>("add-source").addEventListener("click", () => {
    const i = scene.addSource(-0.4 + 0.2 * scene.sources.length, 0.4);
    if (i < 0) showToast("source limit reached (4)");
    else commit();
  });

  let dragging: Hit = null;
  canvas.addEventListener("pointerdown", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const [wx, wy] = canvasToWorld(vp, ev.clientX - rect.left, ev.clientY - rect.top);
    dragging = hitTest(scene, wx, wy);
    if (dragging) canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const rect = canvas.getBoundingClientRect();
    const [wx, wy] = canvasToWorld(vp, ev.clientX - rect.left, ev.clientY - rect.top);
    if (dragging.kind === "obstacle") scene.moveObstacle(dragging.index, wx, wy);
    else scene.moveSource(dragging.index, wx, wy);
    commit();
  });
  canvas.addEventListener("pointerup", () => {
    dragging = null;
  });
  canvas.addEventListener("dblclick", (ev) => {
    const rect = canvas.getBoundingClientRect();
    const [wx, wy] = canvasToWorld(vp, ev.clientX - rect.left, ev.clientY - rect.top);
    const hit = hitTest(scene, wx, wy);
    if (!hit) return;
    if (hit.kind === "obstacle") scene.deleteObstacle(hit.index);
    else scene.deleteSource(hit.index);
    commit();
  });
  canvas.addEventListener(
    "wheel",
    (ev) => {
      const rect = canvas.getBoundingClientRect();
      const [wx, wy] = canvasToWorld(vp, ev.clientX - rect.left, ev.clientY - rect.top);
      const hit = hitTest(scene, wx, wy);
      if (!hit) return;
      ev.preventDefault();
      const sign = ev.deltaY < 0 ? 1 : -1;
      if (hit.kind === "obstacle") {
        const o = scene.obstacles[hit.index]!;
        scene.resizeObstacle(hit.index, o.radius + 0.02 * sign);
      } else {
        const s = scene.sources[hit.index]!;
        scene.setSourceAmplitude(hit.index, s.amplitude + 0.25 * sign);
      }
      commit();
    },
    { passive: false },
  );

  draw();
}

boot().catch((err) => {
  showToast(`failed to start: ${err instanceof Error ? err.message : err}`);
  console.error(err);
});
