/**
 * The single network gateway: every byte the UI exchanges with the engine
 * goes through this client, so the request log doubles as a network audit.
 */

export type OverlayMode = "none" | "mask" | "heatmap" | "segments";

export interface SessionState {
  session_id: string;
  asset_id: string;
  status: "idle" | "selecting" | "ready" | "error";
  error: string | null;
  click: { view_id: string; x: number; y: number; polarity: string } | null;
  params: { k: number; threshold: number };
  oracle_queries: number;
  index_builds: number;
  cloud_points: number;
  groups: { id: number; color: number[] }[] | null;
}

export interface GroupInfo {
  id: number;
  color: [number, number, number];
  representative_click: { view_id: string; x: number; y: number };
  click_count: number;
}

export interface ViewQuery {
  yaw: number;
  pitch: number;
  dist: number;
  overlay: OverlayMode;
  res?: number;
  group?: number;
}

export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`${status}: ${detail}`);
  }
}

type FetchFn = typeof fetch;

export class ApiClient {
  readonly requestLog: string[] = [];
  private fetchFn: FetchFn;

  constructor(readonly baseUrl: string, fetchFn?: FetchFn) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    const url = `${this.baseUrl}${path}`;
    this.requestLog.push(url);
    const response = await this.fetchFn(url, init);
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(response.status, detail);
    }
    return response;
  }

  async createSession(assetId: string, config?: object): Promise<string> {
    const response = await this.request("/sessions", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ asset_id: assetId, config: config ?? null }),
    });
    const body = await response.json();
    return body.session_id as string;
  }

  async getState(sessionId: string): Promise<SessionState> {
    const response = await this.request(`/sessions/${sessionId}`);
    return (await response.json()) as SessionState;
  }

  async fetchView(sessionId: string, query: ViewQuery): Promise<Blob> {
    const params = new URLSearchParams({
      yaw: query.yaw.toFixed(3),
      pitch: query.pitch.toFixed(3),
      dist: query.dist.toFixed(4),
      overlay: query.overlay,
    });
    if (query.res) params.set("res", String(query.res));
    if (query.group !== undefined) params.set("group", String(query.group));
    const response = await this.request(
      `/sessions/${sessionId}/view?${params.toString()}`);
    return await response.blob();
  }

  async click(sessionId: string, body: {
    yaw: number; pitch: number; dist: number;
    x: number; y: number; polarity?: string;
  }): Promise<void> {
    await this.request(`/sessions/${sessionId}/click`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ polarity: "positive", ...body }),
    });
  }

  async patchParams(sessionId: string, params: { threshold?: number; k?: number }):
      Promise<{ k: number; threshold: number }> {
    const response = await this.request(`/sessions/${sessionId}/params`, {
      method: "PATCH",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(params),
    });
    return (await response.json()).params;
  }

  async segment(sessionId: string): Promise<GroupInfo[]> {
    const response = await this.request(`/sessions/${sessionId}/segment`, {
      method: "POST",
    });
    return (await response.json()).groups as GroupInfo[];
  }

  async exportFile(sessionId: string, kind: "uv" | "cloud" | "masks"):
      Promise<Blob> {
    const response = await this.request(`/sessions/${sessionId}/export/${kind}`);
    return await response.blob();
  }

  /** Count of logged requests that do not target the engine API. */
  auditNonApiRequests(): string[] {
    const apiPattern = new RegExp(
      `^${this.baseUrl.replace(/[.*+?^${}()|[\]\\]/g, "\\$&")}/(sessions|assets|healthz)`);
    return this.requestLog.filter((url) => !apiPattern.test(url));
  }
}
