/** Thin client for the session service; the UI talks to nothing else. */

export interface PoseJson {
  euler: [number, number, number];
  translation: [number, number, number];
}

export interface StepOverrides {
  sigma?: number | string;
  lambda?: number;
  t2?: number;
}

export interface StepRequest {
  pose: PoseJson;
  prompt?: string;
  overrides?: StepOverrides;
}

export interface StepResponse {
  frame_index: number;
  image: string; // base64 PNG
  hole_fraction: number;
  timing: Record<string, number>;
}

export interface CreateResponse {
  session_id: string;
  frame_index: number;
  image: string;
}

export interface SessionInfo {
  session_id: string;
  frame_count: number;
  backend: string;
  config: Record<string, unknown>;
  log: Record<string, unknown>[];
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function parseError(resp: Response): Promise<ApiError> {
  let detail = resp.statusText;
  try {
    const body = (await resp.json()) as { detail?: string };
    if (body.detail) detail = body.detail;
  } catch {
    /* non-JSON error body */
  }
  return new ApiError(resp.status, detail);
}

export class ApiClient {
  constructor(private baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await fetch(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  createSession(body: {
    prompt?: string;
    image?: string;
    config?: Record<string, unknown>;
    backend?: string;
  }): Promise<CreateResponse> {
    return this.post("/sessions", body);
  }

  step(sessionId: string, request: StepRequest): Promise<StepResponse> {
    return this.post(`/sessions/${sessionId}/step`, request);
  }

  async getSession(sessionId: string): Promise<SessionInfo> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}`);
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as SessionInfo;
  }

  frameUrl(sessionId: string, index: number): string {
    return `${this.baseUrl}/sessions/${sessionId}/frames/${index}`;
  }

  async fetchFrame(sessionId: string, index: number): Promise<ArrayBuffer> {
    const resp = await fetch(this.frameUrl(sessionId, index));
    if (!resp.ok) throw await parseError(resp);
    return resp.arrayBuffer();
  }

  async deleteSession(sessionId: string): Promise<void> {
    const resp = await fetch(`${this.baseUrl}/sessions/${sessionId}`, { method: "DELETE" });
    if (!resp.ok) throw await parseError(resp);
  }
}
