/** Two-click box refinement.
 *
 * The annotator clicks two opposite corners; the draft turns them into a
 * `[left, top, width, height]` box in image pixels, whatever order the
 * corners came in. Degenerate pairs (zero width or height) are ignored so a
 * double-click cannot submit an empty box.
 */

import type { Box } from "./types.js";

export interface Point {
  x: number;
  y: number;
}

export function boxFromCorners(a: Point, b: Point): Box | null {
  const left = Math.min(a.x, b.x);
  const top = Math.min(a.y, b.y);
  const width = Math.abs(b.x - a.x);
  const height = Math.abs(b.y - a.y);
  if (width <= 0 || height <= 0) return null;
  return [left, top, width, height];
}

export class BoxDraft {
  private first: Point | null = null;

  get drafting(): boolean {
    return this.first !== null;
  }

  get anchor(): Point | null {
    return this.first;
  }

  clear(): void {
    this.first = null;
  }

  /** Feed one click in image pixels. Returns the finished box on the second
   * distinct corner, null while the draft is still open. */
  click(point: Point): Box | null {
    if (this.first === null) {
      this.first = { ...point };
      return null;
    }
    const box = boxFromCorners(this.first, point);
    if (box === null) return null; // same spot twice; keep waiting
    this.first = null;
    return box;
  }
}
