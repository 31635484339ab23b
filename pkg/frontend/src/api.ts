/** Typed fetch client for the annotation service.
 *
 * Transport failures (the fetch promise rejecting before any HTTP status
 * arrives) are retried a few times with a short pause. That is safe for every
 * endpoint here, including the POSTs: the service treats a duplicate response
 * or skip as stale and answers 409 without changing anything, and a duplicate
 * session create answers 409 session-exists. A retry can therefore surface a
 * conflict but never apply an action twice. HTTP error statuses are never
 * retried; they become ApiError so callers can react to the code.
 */

import type {
  LabelsPayload,
  MetricsPayload,
  QueriesPage,
  ResponseBody,
  SkipResult,
  StatusView,
  SubmitResult,
  VectorScene,
} from "./types.js";
import { isErrorPayload } from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly payload: unknown;

  constructor(status: number, payload: unknown) {
    const detail = isErrorPayload(payload)
      ? `${payload.error.code}: ${payload.error.message}`
      : JSON.stringify(payload);
    super(`service replied ${status}: ${detail}`);
    this.name = "ApiError";
    this.status = status;
    this.payload = payload;
  }

  /** Machine-readable error code, when the body carried one. */
  get code(): string | null {
    return isErrorPayload(this.payload) ? this.payload.error.code : null;
  }

  /** Human-readable message exactly as the service phrased it. */
  get serverMessage(): string {
    return isErrorPayload(this.payload) ? this.payload.error.message : this.message;
  }

  get detail(): Record<string, unknown> {
    return isErrorPayload(this.payload) ? this.payload.error.detail ?? {} : {};
  }
}

export interface ApiOptions {
  fetchImpl?: typeof fetch;
  /** Extra attempts after a transport failure. */
  retries?: number;
  retryDelayMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchImpl: typeof fetch;
  private readonly retries: number;
  private readonly retryDelayMs: number;
  private readonly sleep: (ms: number) => Promise<void>;

  constructor(baseUrl: string, options: ApiOptions = {}) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
    this.fetchImpl = options.fetchImpl ?? fetch;
    this.retries = options.retries ?? 2;
    this.retryDelayMs = options.retryDelayMs ?? 150;
    this.sleep = options.sleep ?? defaultSleep;
  }

  private async send(method: string, path: string, body?: unknown): Promise<Response> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    let lastFailure: unknown;
    for (let attempt = 0; attempt <= this.retries; attempt++) {
      if (attempt > 0) await this.sleep(this.retryDelayMs);
      try {
        return await this.fetchImpl(this.baseUrl + path, init);
      } catch (failure) {
        lastFailure = failure;
      }
    }
    throw lastFailure;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.send(method, path, body);
    const text = await response.text();
    let payload: unknown;
    try {
      payload = JSON.parse(text);
    } catch {
      payload = { raw: text };
    }
    if (response.status >= 300) throw new ApiError(response.status, payload);
    return payload as T;
  }

  createSession(config: Record<string, unknown>, sessionId?: string): Promise<StatusView> {
    const body: Record<string, unknown> = { config };
    if (sessionId !== undefined) body.session_id = sessionId;
    return this.request("POST", "/sessions", body);
  }

  status(sessionId: string): Promise<StatusView> {
    return this.request("GET", `/sessions/${sessionId}`);
  }

  queries(sessionId: string, limit = 1): Promise<QueriesPage> {
    return this.request("GET", `/sessions/${sessionId}/queries?limit=${limit}`);
  }

  respond(sessionId: string, body: ResponseBody): Promise<SubmitResult> {
    return this.request("POST", `/sessions/${sessionId}/responses`, body);
  }

  skip(sessionId: string, queryId: string): Promise<SkipResult> {
    return this.request("POST", `/sessions/${sessionId}/skips`, { query_id: queryId });
  }

  labels(sessionId: string): Promise<LabelsPayload> {
    return this.request("GET", `/sessions/${sessionId}/labels`);
  }

  metrics(sessionId: string): Promise<MetricsPayload> {
    return this.request("GET", `/sessions/${sessionId}/metrics`);
  }

  /** Synthetic frames parse as scenes; real sequences stream JPEG bytes. */
  async frame(seqId: string, frame: number): Promise<VectorScene | Blob> {
    const response = await this.send("GET", `/frames/${seqId}/${frame}`);
    const type = response.headers.get("content-type") ?? "";
    if (type.includes("application/json")) {
      const payload = (await response.json()) as unknown;
      if (response.status >= 300) throw new ApiError(response.status, payload);
      return payload as VectorScene;
    }
    if (response.status >= 300) {
      throw new ApiError(response.status, { raw: await response.text() });
    }
    return response.blob();
  }

  /** Link target for the exported labels of a finished session. */
  labelsUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/labels`;
  }
}
