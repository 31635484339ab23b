/** Browser console for one annotator.
 *
 * A tab runs exactly one session at a time; the active session id lives in
 * sessionStorage so a refresh re-attaches instead of losing the run. All
 * ordering, budget accounting, and conflict decisions stay on the server;
 * this layer only shows the latest server truth and turns keys and clicks
 * into intents.
 */

import { ApiClient, ApiError } from "./api.js";
import { BoxDraft } from "./boxdraw.js";
import { interpretKey, type KeyCommand } from "./keyboard.js";
import {
  fitTransform,
  renderScene,
  applyDrawOps,
  toImage,
  type DrawTarget,
} from "./scene.js";
import { SessionFlow, type Intent } from "./session.js";
import type { QueryItem, VectorScene } from "./types.js";

const STORAGE_KEY = "tracklabeler.session";

export interface AppOptions {
  /** Frames shown on each side of the query's anchor frame. */
  contextRadius?: number;
  batchSize?: number;
  canvasWidth?: number;
  canvasHeight?: number;
  /** Defaults to window.sessionStorage: per-tab, survives refresh. */
  storage?: Pick<Storage, "getItem" | "setItem" | "removeItem">;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class AnnotationApp {
  readonly root: HTMLElement;
  readonly api: ApiClient;
  readonly contextRadius: number;
  private readonly batchSize: number;
  private readonly storage: Pick<Storage, "getItem" | "setItem" | "removeItem">;
  private readonly doc: Document;

  flow: SessionFlow | null = null;
  draft = new BoxDraft();
  /** Frame currently painted, one of the context window. */
  selectedFrame = 0;
  private scene: VectorScene | null = null;

  // panels
  private statusLine!: HTMLElement;
  private budgetPanel!: HTMLElement;
  private queryPanel!: HTMLElement;
  private conflictBanner!: HTMLElement;
  private noticeLine!: HTMLElement;
  private frameStrip!: HTMLElement;
  private summaryPanel!: HTMLElement;
  private openForm!: HTMLElement;
  canvas!: HTMLCanvasElement;

  constructor(root: HTMLElement, api: ApiClient, options: AppOptions = {}) {
    this.root = root;
    this.api = api;
    this.doc = root.ownerDocument;
    this.contextRadius = options.contextRadius ?? 5;
    this.batchSize = options.batchSize ?? 1;
    this.storage = options.storage ?? this.doc.defaultView!.sessionStorage;
    this.buildSkeleton(options.canvasWidth ?? 960, options.canvasHeight ?? 540);
  }

  private buildSkeleton(canvasWidth: number, canvasHeight: number): void {
    const doc = this.doc;
    this.root.textContent = "";
    this.statusLine = el(doc, "div", "status-line", "no session");
    this.conflictBanner = el(doc, "div", "conflict-banner");
    this.conflictBanner.hidden = true;
    this.noticeLine = el(doc, "div", "notice-line");
    this.budgetPanel = el(doc, "div", "budget-panel");
    this.queryPanel = el(doc, "div", "query-panel");
    this.frameStrip = el(doc, "div", "frame-strip");
    this.summaryPanel = el(doc, "div", "summary-panel");
    this.summaryPanel.hidden = true;
    this.canvas = el(doc, "canvas", "scene-canvas");
    this.canvas.width = canvasWidth;
    this.canvas.height = canvasHeight;
    this.canvas.tabIndex = 0;

    this.openForm = this.buildOpenForm();

    for (const node of [
      this.statusLine,
      this.budgetPanel,
      this.conflictBanner,
      this.noticeLine,
      this.openForm,
      this.queryPanel,
      this.frameStrip,
      this.canvas,
      this.summaryPanel,
    ]) {
      this.root.appendChild(node);
    }

    this.doc.addEventListener("keydown", (event) => {
      void this.handleKey(event as KeyboardEvent);
    });
    this.canvas.addEventListener("click", (event) => {
      void this.handleCanvasClick(event as MouseEvent);
    });
  }

  private buildOpenForm(): HTMLElement {
    const doc = this.doc;
    const form = el(doc, "div", "open-form");
    const configBox = el(doc, "textarea", "config-input");
    configBox.placeholder = "pipeline config (JSON)";
    const idBox = el(doc, "input", "session-id-input");
    idBox.placeholder = "session id (optional for start, required to attach)";
    const startBtn = el(doc, "button", "start-button", "start session");
    const attachBtn = el(doc, "button", "attach-button", "attach");
    startBtn.addEventListener("click", () => {
      void this.openSession(
        JSON.parse(configBox.value) as Record<string, unknown>,
        idBox.value.trim() || undefined,
      ).catch((failure) => this.showFailure(failure));
    });
    attachBtn.addEventListener("click", () => {
      void this.attachSession(idBox.value.trim()).catch((failure) =>
        this.showFailure(failure),
      );
    });
    form.append(configBox, idBox, startBtn, attachBtn);
    return form;
  }

  /** Re-attach the tab's session after a refresh, if one is stored. */
  async start(): Promise<void> {
    const stored = this.storage.getItem(STORAGE_KEY);
    if (stored) {
      try {
        await this.attachSession(stored);
        return;
      } catch (failure) {
        if (failure instanceof ApiError && failure.status === 404) {
          this.storage.removeItem(STORAGE_KEY);
        } else {
          throw failure;
        }
      }
    }
    this.render();
  }

  async openSession(config: Record<string, unknown>, sessionId?: string): Promise<void> {
    const flow = await SessionFlow.open(this.api, config, sessionId, {
      batchSize: this.batchSize,
    });
    this.adopt(flow);
    await this.showNext();
  }

  async attachSession(sessionId: string): Promise<void> {
    const flow = await SessionFlow.attach(this.api, sessionId, {
      batchSize: this.batchSize,
    });
    this.adopt(flow);
    await this.showNext();
  }

  private adopt(flow: SessionFlow): void {
    this.flow = flow;
    this.storage.setItem(STORAGE_KEY, flow.sessionId);
    this.draft.clear();
    this.scene = null;
  }

  // -- query loop ------------------------------------------------------------

  /** Pull the next query (or the summary) and repaint. */
  async showNext(): Promise<void> {
    if (!this.flow) return;
    const item = await this.flow.refill();
    this.draft.clear();
    if (item === null) {
      await this.showSummary();
      return;
    }
    this.selectedFrame = this.anchorFrame(item);
    await this.loadScene(item.seq_id, this.selectedFrame);
    this.render();
  }

  private anchorFrame(item: QueryItem): number {
    return item.subjects[0]?.frame ?? item.frames[0] ?? 1;
  }

  /** Anchor plus/minus the context radius, clipped at frame 1. Frames past
   * the end of the sequence 404 and are simply not shown. */
  frameWindow(item: QueryItem): number[] {
    const anchor = this.anchorFrame(item);
    const frames: number[] = [];
    for (let f = anchor - this.contextRadius; f <= anchor + this.contextRadius; f++) {
      if (f >= 1) frames.push(f);
    }
    for (const f of item.frames) {
      if (!frames.includes(f)) frames.push(f);
    }
    return frames.sort((a, b) => a - b);
  }

  private async loadScene(seqId: string, frame: number): Promise<void> {
    try {
      const result = await this.api.frame(seqId, frame);
      this.scene = result instanceof Blob ? null : result;
    } catch (failure) {
      if (failure instanceof ApiError && failure.status === 404) {
        this.scene = null;
        return;
      }
      throw failure;
    }
  }

  async stepFrame(delta: number): Promise<void> {
    const item = this.flow?.current();
    if (!item) return;
    const window = this.frameWindow(item);
    const at = window.indexOf(this.selectedFrame);
    const next = window[Math.min(window.length - 1, Math.max(0, at + delta))];
    if (next === undefined || next === this.selectedFrame) return;
    this.selectedFrame = next;
    await this.loadScene(item.seq_id, next);
    this.render();
  }

  // -- input -----------------------------------------------------------------

  async handleKey(event: KeyboardEvent): Promise<void> {
    const item = this.flow?.current() ?? null;
    const command = interpretKey(event.key, {
      kind: item?.query.kind ?? null,
      drafting: this.draft.drafting,
      candidateCount: item?.query.candidates.length ?? 0,
    });
    if (command === null) return;
    event.preventDefault();
    await this.runCommand(command);
  }

  async runCommand(command: KeyCommand): Promise<void> {
    if (command.type === "cancel-draft") {
      this.draft.clear();
      this.render();
      return;
    }
    if (command.type === "frame-step") {
      await this.stepFrame(command.delta);
      return;
    }
    await this.submit(command);
  }

  /** Send an intent for the query on deck and advance the view. */
  async submit(intent: Intent): Promise<void> {
    if (!this.flow) return;
    const outcome = await this.flow.submit(intent);
    if (!outcome.ok && outcome.reason === "conflict") {
      this.render(); // keep the query; the banner shows the server's words
      return;
    }
    await this.showNext();
  }

  async handleCanvasClick(event: MouseEvent): Promise<void> {
    const item = this.flow?.current();
    if (!item || !this.scene) return;
    const t = fitTransform(
      this.scene.image_width,
      this.scene.image_height,
      this.canvas.width,
      this.canvas.height,
    );
    const rect = this.canvas.getBoundingClientRect();
    const point = toImage(t, { x: event.clientX - rect.left, y: event.clientY - rect.top });

    if (item.query.kind === "refine-box") {
      const box = this.draft.click(point);
      if (box !== null) {
        await this.submit({ type: "box", box });
      } else {
        this.render();
      }
      return;
    }
    if (item.query.kind === "associate") {
      const hit = this.hitCandidate(item, point);
      if (hit !== null) await this.submit({ type: "choose", clusterId: hit });
    }
  }

  /** Candidate whose box (on the painted frame) contains the click. */
  private hitCandidate(item: QueryItem, point: { x: number; y: number }): number | null {
    for (const candidate of item.candidates) {
      for (const det of candidate.dets) {
        if (det.frame !== this.selectedFrame) continue;
        const [l, t, w, h] = det.box;
        if (point.x >= l && point.x <= l + w && point.y >= t && point.y <= t + h) {
          return candidate.cluster_id;
        }
      }
    }
    return null;
  }

  // -- painting ---------------------------------------------------------------

  render(): void {
    const flow = this.flow;
    if (!flow) {
      this.statusLine.textContent = "no session";
      this.openForm.hidden = false;
      return;
    }
    this.openForm.hidden = true;
    const item = flow.current();
    this.statusLine.textContent =
      `session ${flow.sessionId} · ${flow.status.seq_id} · phase ${flow.status.phase}` +
      (flow.complete ? " · complete" : "");
    this.renderBudget();
    this.renderConflict();
    this.noticeLine.textContent = flow.notice ?? "";
    this.renderQuery(item);
    this.renderFrameStrip(item);
    this.paintScene(item);
  }

  private renderBudget(): void {
    const flow = this.flow!;
    const b = flow.budget;
    const doc = this.doc;
    this.budgetPanel.textContent = "";
    const headline = el(
      doc,
      "div",
      "budget-headline",
      `clicks ${b.spent_total} / ${b.ledger.total}`,
    );
    headline.dataset.spent = String(b.spent_total);
    headline.dataset.total = String(b.ledger.total);
    const levels = el(
      doc,
      "div",
      "budget-levels",
      `remaining by level: ${b.remaining_by_level.join(" ")}`,
    );
    const reserve = el(
      doc,
      "div",
      "budget-reserve",
      `box-refine reserve left: ${b.reserve_remaining}`,
    );
    this.budgetPanel.append(headline, levels, reserve);
  }

  private renderConflict(): void {
    const conflict = this.flow!.conflict;
    this.conflictBanner.hidden = conflict === null;
    this.conflictBanner.textContent = conflict
      ? `decision rejected (${conflict.code}): ${conflict.message}`
      : "";
  }

  private renderQuery(item: QueryItem | null): void {
    const doc = this.doc;
    this.queryPanel.textContent = "";
    if (item === null) return;
    const q = item.query;
    this.queryPanel.appendChild(
      el(
        doc,
        "div",
        "query-head",
        `${q.kind} · level ${q.level} · costs ${q.cost} click${q.cost === 1 ? "" : "s"}` +
          ` · uncertainty ${q.uncertainty.toFixed(3)}`,
      ),
    );
    this.queryPanel.appendChild(
      el(doc, "div", "query-id", `query ${q.query_id}`),
    );
    if (q.kind === "validate-node") {
      this.queryPanel.appendChild(
        el(doc, "div", "query-hint", "a: accept · r: reject · s: skip"),
      );
    } else if (q.kind === "refine-box") {
      this.queryPanel.appendChild(
        el(
          doc,
          "div",
          "query-hint",
          "click two corners of the correct box · r: reject detection · s: skip",
        ),
      );
    } else {
      this.queryPanel.appendChild(
        el(
          doc,
          "div",
          "query-hint",
          "digits or click: choose continuation · Escape: none match · s: skip",
        ),
      );
      const list = el(doc, "ol", "candidate-list");
      item.candidates.forEach((candidate, index) => {
        const frames = candidate.dets.map((d) => d.frame);
        list.appendChild(
          el(
            doc,
            "li",
            "candidate-item",
            `[${index + 1}] cluster ${candidate.cluster_id} · score ` +
              `${candidate.score.toFixed(3)} · frames ${Math.min(...frames)}..${Math.max(...frames)}`,
          ),
        );
      });
      this.queryPanel.appendChild(list);
    }
  }

  private renderFrameStrip(item: QueryItem | null): void {
    this.frameStrip.textContent = "";
    if (item === null) return;
    for (const frame of this.frameWindow(item)) {
      const button = el(this.doc, "button", "frame-button", String(frame));
      if (frame === this.selectedFrame) button.classList.add("selected");
      if (item.frames.includes(frame)) button.classList.add("query-frame");
      button.addEventListener("click", () => {
        this.selectedFrame = frame;
        void this.loadScene(item.seq_id, frame).then(() => this.render());
      });
      this.frameStrip.appendChild(button);
    }
  }

  private paintScene(item: QueryItem | null): void {
    const ctx = this.canvas.getContext("2d") as DrawTarget | null;
    if (!ctx || !this.scene || item === null) return;
    const ops = renderScene(this.scene, this.canvas.width, this.canvas.height, {
      subjectDets: item.query.subject_dets,
      candidateGroups: item.candidates.map((c) => c.dets.map((d) => d.det_id)),
      draftAnchor: this.draft.anchor,
      draftBox: null,
    });
    applyDrawOps(ctx, ops);
  }

  // -- summary ----------------------------------------------------------------

  private async showSummary(): Promise<void> {
    const flow = this.flow!;
    await flow.refreshStatus();
    const labels = await flow.labels();
    const doc = this.doc;
    this.summaryPanel.textContent = "";
    this.summaryPanel.hidden = false;
    this.queryPanel.textContent = "";
    this.frameStrip.textContent = "";
    this.summaryPanel.appendChild(el(doc, "h2", "summary-title", "session complete"));
    this.summaryPanel.appendChild(
      el(
        doc,
        "div",
        "summary-clicks",
        `clicks spent: ${flow.budget.spent_total} of ${flow.budget.ledger.total}`,
      ),
    );
    const byKind = Object.entries(flow.budget.ledger.spent_by_category)
      .map(([kind, clicks]) => `${kind}: ${clicks}`)
      .join(" · ");
    if (byKind) {
      this.summaryPanel.appendChild(el(doc, "div", "summary-categories", byKind));
    }
    this.summaryPanel.appendChild(
      el(doc, "div", "summary-labels", `labels exported: ${labels.entries.length} boxes`),
    );
    const link = el(doc, "a", "summary-link", "download labels");
    link.href = flow.labelsUrl();
    this.summaryPanel.appendChild(link);
    if (flow.status.gt_available) {
      const metrics = await flow.metrics();
      this.summaryPanel.appendChild(
        el(
          doc,
          "div",
          "summary-metrics",
          `HOTA ${metrics.hota.hota.toFixed(4)} · MOTA ${Number(metrics.mota.mota).toFixed(4)}` +
            ` · IDF1 ${Number(metrics.idf1.idf1).toFixed(4)}`,
        ),
      );
    }
    this.render();
  }

  private showFailure(failure: unknown): void {
    const message =
      failure instanceof ApiError ? failure.serverMessage : String(failure);
    this.noticeLine.textContent = message;
  }
}

export function mountApp(
  root: HTMLElement,
  api: ApiClient,
  options: AppOptions = {},
): AnnotationApp {
  return new AnnotationApp(root, api, options);
}
