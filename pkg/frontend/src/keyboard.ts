/** Keyboard-first bindings.
 *
 * Pure mapping from a KeyboardEvent key to a command, decided against the
 * query on deck. Letters answer, digits pick association candidates in the
 * order they are listed, Escape means "none of these" (or abandons a
 * half-drawn box), arrows move through the temporal context.
 *
 *   a / y        accept the subject          (validation)
 *   r / n        reject the subject          (validation, box refinement)
 *   1..9, 0      choose candidate 1..10      (association)
 *   Escape       no candidate matches        (association)
 *   s            skip the query, no clicks spent
 *   arrows       previous / next context frame
 */

import type { Intent } from "./session.js";
import type { QueryKind } from "./types.js";

export interface KeyContext {
  /** Kind of the query on deck, or null when nothing is pending. */
  kind: QueryKind | null;
  /** A refine-box draft has its first corner placed. */
  drafting: boolean;
  candidateCount: number;
}

export type ViewCommand =
  | { type: "cancel-draft" }
  | { type: "frame-step"; delta: -1 | 1 };

export type KeyCommand = Intent | ViewCommand;

export function interpretKey(key: string, ctx: KeyContext): KeyCommand | null {
  if (key === "ArrowLeft") return { type: "frame-step", delta: -1 };
  if (key === "ArrowRight") return { type: "frame-step", delta: 1 };
  if (key === "Escape") {
    if (ctx.drafting) return { type: "cancel-draft" };
    if (ctx.kind === "associate") return { type: "none" };
    return null;
  }
  const lower = key.length === 1 ? key.toLowerCase() : key;
  if (lower === "s") return { type: "skip" };
  if (lower === "a" || lower === "y") {
    return ctx.kind === "validate-node" ? { type: "accept" } : null;
  }
  if (lower === "r" || lower === "n") {
    return ctx.kind === "validate-node" || ctx.kind === "refine-box"
      ? { type: "reject" }
      : null;
  }
  if (ctx.kind === "associate" && /^[0-9]$/.test(lower)) {
    const index = lower === "0" ? 9 : Number(lower) - 1;
    return index < ctx.candidateCount ? { type: "choose-index", index } : null;
  }
  return null;
}
