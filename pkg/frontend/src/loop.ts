/** Session driver: the play loop and the edit pipeline.
 *
 * Concurrency contract: at most one HTTP request is in flight at a time.
 * Edits are debounced (a drag emits dozens of scene changes, only the last
 * matters) and coalesced (edits landing while a request is out replace each
 * other; exactly one PUT goes out when the line is free). A pending edit
 * always beats the next step, so what the user just did is what the next
 * frames simulate.
 *
 * Error policy: 4xx means the request itself was bad — surface the server's
 * complaint (with the field name when it names one) and keep going. 5xx or a
 * transport failure means the server is unwell — pause playback instead of
 * hammering it.
 */

import { Api, ApiError, type EnvBody } from "./api.js";

export interface LoopEvents {
  /** A fresh snapshot arrived (from a step or an env edit). */
  onFrame(field: number[], nodeTypes: number[], step: number): void;
  /** A 4xx response; message includes the offending field when known. */
  onToast(message: string): void;
  /** Playback was paused because of a server/transport failure. */
  onErrorPause(message: string): void;
}

export class SessionLoop {
  playing = false;

  private pendingEdit: EnvBody | null = null;
  private inFlight = false;
  private debounceTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private readonly api: Api,
    private readonly sessionId: string,
    private readonly events: LoopEvents,
    private readonly debounceMs = 150,
  ) {}

  /** Register an edit. Restarts the debounce window; the body sent is
   * whatever was queued last when the window closes. */
  queueEdit(body: EnvBody): void {
    if (this.debounceTimer !== null) clearTimeout(this.debounceTimer);
    this.debounceTimer = setTimeout(() => {
      this.debounceTimer = null;
      this.pendingEdit = body;
      void this.pump(false);
    }, this.debounceMs);
  }

  play(): void {
    this.playing = true;
  }

  pause(): void {
    this.playing = false;
  }

  /** Advance the rollout by one step if playing and the line is free.
   * Driven by an external timer at the chosen step rate. */
  tick(): void {
    void this.pump(true);
  }

  /** True while a request is out; exposed for tests. */
  get busy(): boolean {
    return this.inFlight;
  }

  dispose(): void {
    if (this.debounceTimer !== null) clearTimeout(this.debounceTimer);
    this.debounceTimer = null;
    this.pendingEdit = null;
  }

  private async pump(wantStep: boolean): Promise<void> {
    if (this.inFlight) return;

    const edit = this.pendingEdit;
    if (edit !== null) {
      this.pendingEdit = null;
      this.inFlight = true;
      try {
        const r = await this.api.putEnv(this.sessionId, edit);
        this.events.onFrame(r.u, r.node_types, r.step);
      } catch (err) {
        this.handleError(err);
      } finally {
        this.inFlight = false;
      }
      // An edit may have been coalesced in while the PUT was out.
      if (this.pendingEdit !== null) void this.pump(false);
      return;
    }

    if (!wantStep || !this.playing) return;
    this.inFlight = true;
    try {
      const r = await this.api.step(this.sessionId, 1);
      const last = r.fields[r.fields.length - 1];
      if (last !== undefined) {
        this.events.onFrame(last, r.node_types, r.step);
      }
    } catch (err) {
      this.handleError(err);
    } finally {
      this.inFlight = false;
    }
    if (this.pendingEdit !== null) void this.pump(false);
  }

  private handleError(err: unknown): void {
    if (err instanceof ApiError && err.status < 500) {
      this.events.onToast(err.message);
      return;
    }
    this.playing = false;
    const message = err instanceof Error ? err.message : String(err);
    this.events.onErrorPause(message);
  }
}
