import { describe, expect, it } from "vitest";

import { BoxDraft, boxFromCorners } from "../src/boxdraw.js";

describe("boxFromCorners", () => {
  it("normalizes corners given in any order", () => {
    expect(boxFromCorners({ x: 10, y: 20 }, { x: 50, y: 100 })).toEqual([10, 20, 40, 80]);
    expect(boxFromCorners({ x: 50, y: 100 }, { x: 10, y: 20 })).toEqual([10, 20, 40, 80]);
    expect(boxFromCorners({ x: 50, y: 20 }, { x: 10, y: 100 })).toEqual([10, 20, 40, 80]);
  });

  it("keeps fractional pixel coordinates exact", () => {
    expect(boxFromCorners({ x: 1.25, y: 2.5 }, { x: 4.75, y: 9.5 })).toEqual([
      1.25, 2.5, 3.5, 7,
    ]);
  });

  it("refuses degenerate boxes", () => {
    expect(boxFromCorners({ x: 5, y: 5 }, { x: 5, y: 9 })).toBeNull();
    expect(boxFromCorners({ x: 5, y: 5 }, { x: 9, y: 5 })).toBeNull();
    expect(boxFromCorners({ x: 5, y: 5 }, { x: 5, y: 5 })).toBeNull();
  });
});

describe("BoxDraft", () => {
  it("completes on the second distinct corner", () => {
    const draft = new BoxDraft();
    expect(draft.drafting).toBe(false);
    expect(draft.click({ x: 30, y: 40 })).toBeNull();
    expect(draft.drafting).toBe(true);
    expect(draft.anchor).toEqual({ x: 30, y: 40 });
    expect(draft.click({ x: 10, y: 90 })).toEqual([10, 40, 20, 50]);
    expect(draft.drafting).toBe(false);
  });

  it("ignores a double-click on the same spot and keeps waiting", () => {
    const draft = new BoxDraft();
    draft.click({ x: 7, y: 7 });
    expect(draft.click({ x: 7, y: 7 })).toBeNull();
    expect(draft.drafting).toBe(true);
    expect(draft.click({ x: 17, y: 27 })).toEqual([7, 7, 10, 20]);
  });

  it("can be cancelled mid-draft", () => {
    const draft = new BoxDraft();
    draft.click({ x: 1, y: 2 });
    draft.clear();
    expect(draft.drafting).toBe(false);
    expect(draft.click({ x: 5, y: 6 })).toBeNull(); // starts a fresh draft
  });
});
