/** Session state machine.
 *
 * The service owns every decision about ordering and budget; this class is a
 * local mirror that can be thrown away and rebuilt from GET /sessions/{id}
 * plus the queries endpoint at any moment (that is exactly what a page
 * refresh does). Nothing is persisted client-side, and the response for a
 * query always echoes the query_id the service issued.
 */

import { ApiClient, ApiError } from "./api.js";
import type {
  Box,
  BudgetView,
  LabelsPayload,
  MetricsPayload,
  QueryCore,
  QueryItem,
  ResponseBody,
  StatusView,
  SubmitResult,
} from "./types.js";

/** What the annotator just did, before it is checked against the query. */
export type Intent =
  | { type: "accept" }
  | { type: "reject" }
  | { type: "choose"; clusterId: number }
  | { type: "choose-index"; index: number }
  | { type: "none" }
  | { type: "box"; box: Box }
  | { type: "skip" };

export interface ConflictNotice {
  queryId: string;
  code: string;
  /** The service's message, word for word. */
  message: string;
}

export type SubmitOutcome =
  | { ok: true; result: SubmitResult }
  | { ok: false; reason: "not-applicable" }
  | { ok: false; reason: "stale"; message: string }
  | { ok: false; reason: "conflict"; notice: ConflictNotice };

/** Translate an intent into the wire response for a specific query, or null
 * when the intent does not apply to that query kind. */
export function buildResponse(query: QueryCore, intent: Intent): ResponseBody | null {
  const base = {
    query_id: query.query_id,
    choice: null as number | null,
    box: null as Box | null,
    responder: "ui",
    timestamp: 0,
  };
  switch (intent.type) {
    case "accept":
      if (query.kind !== "validate-node") return null;
      return { ...base, action: "accept" };
    case "reject":
      if (query.kind !== "validate-node" && query.kind !== "refine-box") return null;
      return { ...base, action: "reject" };
    case "choose": {
      if (query.kind !== "associate") return null;
      const known = query.candidates.some((c) => c.cluster_id === intent.clusterId);
      if (!known) return null;
      return { ...base, action: "choose", choice: intent.clusterId };
    }
    case "choose-index": {
      if (query.kind !== "associate") return null;
      const candidate = query.candidates[intent.index];
      if (candidate === undefined) return null;
      return { ...base, action: "choose", choice: candidate.cluster_id };
    }
    case "none":
      if (query.kind !== "associate") return null;
      return { ...base, action: "none" };
    case "box":
      if (query.kind !== "refine-box") return null;
      return { ...base, action: "box", box: intent.box };
    case "skip":
      return null; // skips travel on their own endpoint
  }
}

export interface SessionOptions {
  /** Queries fetched per round trip. */
  batchSize?: number;
}

export class SessionFlow {
  readonly api: ApiClient;
  readonly sessionId: string;
  readonly batchSize: number;

  status: StatusView;
  budget: BudgetView;
  complete: boolean;
  queue: QueryItem[] = [];
  /** Last rejected decision, shown until something else succeeds. */
  conflict: ConflictNotice | null = null;
  /** Last informational event (a query resolving itself, a skip, ...). */
  notice: string | null = null;

  private constructor(api: ApiClient, status: StatusView, options: SessionOptions) {
    this.api = api;
    this.sessionId = status.session_id;
    this.batchSize = options.batchSize ?? 1;
    this.status = status;
    this.budget = status.budget;
    this.complete = status.complete;
  }

  /** Start a fresh session. If a retried create collides with itself the
   * service answers session-exists, and attaching recovers it. */
  static async open(
    api: ApiClient,
    config: Record<string, unknown>,
    sessionId?: string,
    options: SessionOptions = {},
  ): Promise<SessionFlow> {
    try {
      const status = await api.createSession(config, sessionId);
      return new SessionFlow(api, status, options);
    } catch (failure) {
      if (
        failure instanceof ApiError &&
        failure.code === "session-exists" &&
        sessionId !== undefined
      ) {
        return SessionFlow.attach(api, sessionId, options);
      }
      throw failure;
    }
  }

  /** Rebuild the machine for an existing session (page refresh, reconnect). */
  static async attach(
    api: ApiClient,
    sessionId: string,
    options: SessionOptions = {},
  ): Promise<SessionFlow> {
    const status = await api.status(sessionId);
    return new SessionFlow(api, status, options);
  }

  current(): QueryItem | null {
    return this.queue[0] ?? null;
  }

  /** Make sure a query is on deck, fetching a batch when the local mirror is
   * empty. Returns the query to show, or null once the session is complete. */
  async refill(): Promise<QueryItem | null> {
    if (this.queue.length > 0) return this.current();
    if (this.complete) return null;
    const page = await this.api.queries(this.sessionId, this.batchSize);
    this.queue = [...page.queries];
    this.budget = page.budget;
    this.complete = page.complete;
    return this.current();
  }

  /** Apply an intent to the query on deck. */
  async submit(intent: Intent): Promise<SubmitOutcome> {
    const item = this.current();
    if (item === null) return { ok: false, reason: "not-applicable" };
    if (intent.type === "skip") {
      await this.skipCurrent();
      return { ok: false, reason: "stale", message: "query skipped" };
    }
    const body = buildResponse(item.query, intent);
    if (body === null) return { ok: false, reason: "not-applicable" };
    try {
      const result = await this.api.respond(this.sessionId, body);
      this.queue.shift();
      this.budget = result.budget;
      this.complete = result.complete;
      this.conflict = null;
      this.notice = null;
      return { ok: true, result };
    } catch (failure) {
      if (failure instanceof ApiError && failure.status === 409) {
        if (failure.code === "conflicting-clamp") {
          // The query is still open; keep it on deck so the annotator can
          // answer differently, and show the service's wording untouched.
          const notice: ConflictNotice = {
            queryId: body.query_id,
            code: failure.code,
            message: failure.serverMessage,
          };
          this.conflict = notice;
          return { ok: false, reason: "conflict", notice };
        }
        // stale-response: the service already settled this query (an earlier
        // retry landed, a batch-mate resolved it, or another view answered).
        this.queue.shift();
        this.notice = failure.serverMessage;
        return { ok: false, reason: "stale", message: failure.serverMessage };
      }
      throw failure;
    }
  }

  /** Skip the query on deck without spending clicks. */
  async skipCurrent(): Promise<void> {
    const item = this.current();
    if (item === null) return;
    try {
      const result = await this.api.skip(this.sessionId, item.query.query_id);
      this.budget = result.budget;
      this.notice = `skipped ${result.skipped}`;
    } catch (failure) {
      if (!(failure instanceof ApiError && failure.status === 409)) throw failure;
      this.notice = failure.serverMessage;
    }
    this.queue.shift();
  }

  /** Re-pull authoritative state; discards nothing that matters because the
   * queue is re-servable on demand. */
  async refreshStatus(): Promise<StatusView> {
    this.status = await this.api.status(this.sessionId);
    this.budget = this.status.budget;
    this.complete = this.status.complete;
    return this.status;
  }

  labels(): Promise<LabelsPayload> {
    return this.api.labels(this.sessionId);
  }

  metrics(): Promise<MetricsPayload> {
    return this.api.metrics(this.sessionId);
  }

  labelsUrl(): string {
    return this.api.labelsUrl(this.sessionId);
  }
}
