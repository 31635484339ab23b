import { describe, expect, it } from "vitest";

import { interpretKey, type KeyContext } from "../src/keyboard.js";

const ctx = (over: Partial<KeyContext> = {}): KeyContext => ({
  kind: "validate-node",
  drafting: false,
  candidateCount: 0,
  ...over,
});

describe("interpretKey", () => {
  it("maps accept and reject onto validation queries", () => {
    expect(interpretKey("a", ctx())).toEqual({ type: "accept" });
    expect(interpretKey("y", ctx())).toEqual({ type: "accept" });
    expect(interpretKey("r", ctx())).toEqual({ type: "reject" });
    expect(interpretKey("n", ctx())).toEqual({ type: "reject" });
    expect(interpretKey("A", ctx())).toEqual({ type: "accept" });
  });

  it("rejects a detection during box refinement but never accepts one", () => {
    expect(interpretKey("r", ctx({ kind: "refine-box" }))).toEqual({ type: "reject" });
    expect(interpretKey("a", ctx({ kind: "refine-box" }))).toBeNull();
  });

  it("chooses association candidates by position, 0 meaning the tenth", () => {
    const assoc = ctx({ kind: "associate", candidateCount: 10 });
    expect(interpretKey("1", assoc)).toEqual({ type: "choose-index", index: 0 });
    expect(interpretKey("9", assoc)).toEqual({ type: "choose-index", index: 8 });
    expect(interpretKey("0", assoc)).toEqual({ type: "choose-index", index: 9 });
  });

  it("ignores digits past the end of the candidate list", () => {
    const assoc = ctx({ kind: "associate", candidateCount: 2 });
    expect(interpretKey("3", assoc)).toBeNull();
    expect(interpretKey("0", assoc)).toBeNull();
  });

  it("ignores digits outside association queries", () => {
    expect(interpretKey("1", ctx())).toBeNull();
    expect(interpretKey("1", ctx({ kind: "refine-box" }))).toBeNull();
  });

  it("maps Escape to none-of-these on association queries", () => {
    expect(interpretKey("Escape", ctx({ kind: "associate", candidateCount: 3 }))).toEqual({
      type: "none",
    });
  });

  it("lets Escape abandon a half-drawn box instead of answering", () => {
    const drafting = ctx({ kind: "refine-box", drafting: true });
    expect(interpretKey("Escape", drafting)).toEqual({ type: "cancel-draft" });
    expect(interpretKey("Escape", ctx({ kind: "refine-box" }))).toBeNull();
  });

  it("skips and steps frames regardless of query kind", () => {
    expect(interpretKey("s", ctx())).toEqual({ type: "skip" });
    expect(interpretKey("ArrowLeft", ctx({ kind: null }))).toEqual({
      type: "frame-step",
      delta: -1,
    });
    expect(interpretKey("ArrowRight", ctx())).toEqual({ type: "frame-step", delta: 1 });
  });

  it("leaves unbound keys alone", () => {
    expect(interpretKey("q", ctx())).toBeNull();
    expect(interpretKey("Enter", ctx())).toBeNull();
    expect(interpretKey("Escape", ctx())).toBeNull();
  });
});
