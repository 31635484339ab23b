/** JSON shapes of the annotation service, mirrored field for field.
 *
 * Everything the UI knows arrives through these payloads; nothing here is
 * invented client-side. Boxes are `[left, top, width, height]` in image
 * pixels throughout.
 */

export type Box = [number, number, number, number];

export type QueryKind = "validate-node" | "refine-box" | "associate";

export type ResponseAction = "accept" | "reject" | "choose" | "none" | "box";

export interface DetectionView {
  det_id: number;
  frame: number;
  box: Box;
  confidence: number;
}

export interface CandidateCore {
  cluster_id: number;
  score: number;
  det_ids: number[];
}

export interface QueryCore {
  query_id: string;
  kind: QueryKind;
  level: number;
  clip_index: number;
  subject: number;
  subject_dets: number[];
  uncertainty: number;
  cost: number;
  candidates: CandidateCore[];
}

export interface CandidateView {
  cluster_id: number;
  score: number;
  dets: DetectionView[];
}

/** One pending query as served, with its detections resolved to boxes. */
export interface QueryItem {
  query: QueryCore;
  subjects: DetectionView[];
  candidates: CandidateView[];
  frames: number[];
  seq_id: string;
}

export interface LedgerDict {
  total: number;
  allocations: number[];
  reserve: number;
  spent: number[];
  reserve_spent: number;
  spent_by_category: Record<string, number>;
}

export interface BudgetView {
  ledger: LedgerDict;
  spent_total: number;
  remaining_by_level: number[];
  reserve_remaining: number;
}

export interface StatusView {
  session_id: string;
  seq_id: string;
  complete: boolean;
  phase: string;
  budget: BudgetView;
  gt_available: boolean;
}

export interface QueriesPage {
  queries: QueryItem[];
  complete: boolean;
  budget: BudgetView;
}

/** Body of POST /sessions/{id}/responses. */
export interface ResponseBody {
  query_id: string;
  action: ResponseAction;
  choice: number | null;
  box: Box | null;
  responder: string;
  timestamp: number;
}

export interface SubmitResult {
  applied: boolean;
  query_id: string;
  budget: BudgetView;
  complete: boolean;
}

export interface SkipResult {
  skipped: string;
  budget: BudgetView;
}

export interface LabelEntryView {
  frame: number;
  track_id: number;
  box: Box;
  provenance: string;
  score: number;
}

export interface LabelsPayload {
  seq_id: string;
  complete: boolean;
  entries: LabelEntryView[];
}

export interface MetricsPayload {
  complete: boolean;
  hota: { hota: number; det_a: number; ass_a: number; per_alpha: unknown };
  mota: Record<string, number>;
  idf1: Record<string, number>;
}

/** Synthetic frames come back as draw-it-yourself scene descriptions. */
export interface VectorScene {
  kind: "vector-scene";
  seq_id: string;
  frame: number;
  image_width: number;
  image_height: number;
  detections: DetectionView[];
}

export interface ErrorPayload {
  error: {
    code: string;
    message: string;
    detail?: Record<string, unknown>;
  };
}

export function isErrorPayload(value: unknown): value is ErrorPayload {
  if (typeof value !== "object" || value === null) return false;
  const err = (value as { error?: unknown }).error;
  return (
    typeof err === "object" &&
    err !== null &&
    typeof (err as { code?: unknown }).code === "string" &&
    typeof (err as { message?: unknown }).message === "string"
  );
}
