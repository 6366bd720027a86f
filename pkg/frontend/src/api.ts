/** Typed client for the surrogate service. All state lives server-side;
 * this module only shuttles JSON. */

export interface ObstacleBody {
  cx: number;
  cy: number;
  radius: number;
}

export interface SourceBody {
  cx: number;
  cy: number;
  amplitude: number;
  sharpness: number;
}

export interface EnvBody {
  obstacles: ObstacleBody[];
  sources: SourceBody[];
}

export interface SessionCreated {
  session_id: string;
  dx: number;
  n_nodes: number;
  x: number[];
  y: number[];
  /** Flat triangle list: three vertex indices per element. */
  elements: number[];
  node_types: number[];
  u: number[];
  step: number;
  meta: Record<string, unknown>;
}

export interface StepResponse {
  session_id: string;
  step: number;
  node_types: number[];
  /** n+1 snapshots: the field before stepping, then one per step taken. */
  fields: number[][];
}

export interface EnvUpdated {
  session_id: string;
  step: number;
  node_types: number[];
  u: number[];
}

/** Raised for any non-2xx response. `field` is the offending parameter name
 * when the server reports one (validation errors do). */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly field: string | null,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Pull a human-usable message and field name out of an error body.
 * Validation errors arrive as {detail: [{loc: [...], msg: ...}]}; other
 * errors as {detail: "..."}; anything else falls back to the status text. */
export function parseErrorBody(
  status: number,
  body: unknown,
  statusText: string,
): { field: string | null; message: string } {
  if (typeof body === "object" && body !== null && "detail" in body) {
    const detail = (body as { detail: unknown }).detail;
    if (typeof detail === "string") {
      return { field: null, message: detail };
    }
    if (Array.isArray(detail) && detail.length > 0) {
      const first = detail[0] as { loc?: unknown; msg?: unknown };
      let field: string | null = null;
      if (Array.isArray(first.loc)) {
        // loc is a path like ["body", "obstacles", 0, "radius"]; the last
        // string segment is the parameter the server objected to.
        for (let i = first.loc.length - 1; i >= 0; i--) {
          if (typeof first.loc[i] === "string" && first.loc[i] !== "body") {
            field = first.loc[i] as string;
            break;
          }
        }
      }
      const msg = typeof first.msg === "string" ? first.msg : "invalid value";
      return { field, message: field ? `${field}: ${msg}` : msg };
    }
  }
  return { field: null, message: `HTTP ${status} ${statusText}` };
}

export class Api {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    let parsed: unknown = null;
    try {
      parsed = await resp.json();
    } catch {
      // non-JSON body; parseErrorBody falls back to the status line
    }
    if (!resp.ok) {
      const { field, message } = parseErrorBody(resp.status, parsed, resp.statusText);
      throw new ApiError(resp.status, field, message);
    }
    return parsed as T;
  }

  createSession(env: EnvBody): Promise<SessionCreated> {
    return this.request<SessionCreated>("POST", "/session", env);
  }

  step(sessionId: string, n: number): Promise<StepResponse> {
    return this.request<StepResponse>(
      "POST",
      `/session/${sessionId}/step?n=${n}`,
    );
  }

  putEnv(sessionId: string, env: EnvBody): Promise<EnvUpdated> {
    return this.request<EnvUpdated>("PUT", `/session/${sessionId}/env`, env);
  }
}
