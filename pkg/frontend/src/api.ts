// HTTP client for the session service. The fetch implementation is injected
// so tests and non-browser hosts can supply their own.

import type {
  FramePayload,
  LabelSubmission,
  MetricsSnapshot,
  SessionState,
} from "./types.js";

export type FetchLike = (
  input: string,
  init?: RequestInit
) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly body: string
  ) {
    super(`HTTP ${status}: ${body}`);
  }
}

export class ApiClient {
  constructor(
    private readonly base: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args)
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.fetchImpl(`${this.base}${path}`);
    const text = await resp.text();
    if (!resp.ok) throw new ApiError(resp.status, text);
    return JSON.parse(text) as T;
  }

  getSession(): Promise<SessionState> {
    return this.getJson<SessionState>("/api/session");
  }

  getFrame(): Promise<FramePayload> {
    return this.getJson<FramePayload>("/api/frame");
  }

  getMetrics(): Promise<MetricsSnapshot> {
    return this.getJson<MetricsSnapshot>("/api/metrics");
  }

  async postLabels(submission: LabelSubmission): Promise<void> {
    const resp = await this.fetchImpl(`${this.base}/api/labels`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(submission),
    });
    if (!resp.ok) throw new ApiError(resp.status, await resp.text());
  }

  /**
   * Subscribe to the server-sent event stream. Resolves when the stream ends;
   * callers handle reconnecting. Events arrive as parsed session states.
   */
  async streamEvents(
    onEvent: (state: SessionState) => void,
    signal?: AbortSignal
  ): Promise<void> {
    const resp = await this.fetchImpl(`${this.base}/api/events`, { signal });
    if (!resp.ok || !resp.body) {
      throw new ApiError(resp.status, "event stream unavailable");
    }
    const reader = resp.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let idx: number;
      while ((idx = buffer.indexOf("\n\n")) >= 0) {
        const chunk = buffer.slice(0, idx);
        buffer = buffer.slice(idx + 2);
        for (const line of chunk.split("\n")) {
          if (line.startsWith("data: ")) {
            onEvent(JSON.parse(line.slice(6)) as SessionState);
          }
        }
      }
    }
  }
}
