/** Canvas rendering for vector scenes.
 *
 * Building the picture is split from painting it: `renderScene` turns a
 * scene plus the current query context into a flat list of draw operations
 * in canvas coordinates, and `applyDrawOps` replays that list onto a 2d
 * context. Everything interesting is in the first half, which is pure.
 */

import type { Box, VectorScene } from "./types.js";
import type { Point } from "./boxdraw.js";

export interface ViewTransform {
  scale: number;
  offsetX: number;
  offsetY: number;
}

/** Largest centered fit of the image inside the canvas, aspect preserved. */
export function fitTransform(
  imageWidth: number,
  imageHeight: number,
  canvasWidth: number,
  canvasHeight: number,
): ViewTransform {
  const scale = Math.min(canvasWidth / imageWidth, canvasHeight / imageHeight);
  return {
    scale,
    offsetX: (canvasWidth - imageWidth * scale) / 2,
    offsetY: (canvasHeight - imageHeight * scale) / 2,
  };
}

export function toCanvas(t: ViewTransform, p: Point): Point {
  return { x: t.offsetX + p.x * t.scale, y: t.offsetY + p.y * t.scale };
}

export function toImage(t: ViewTransform, p: Point): Point {
  return { x: (p.x - t.offsetX) / t.scale, y: (p.y - t.offsetY) / t.scale };
}

export type DrawOp =
  | { op: "clear"; width: number; height: number; fill: string }
  | {
      op: "rect";
      x: number;
      y: number;
      w: number;
      h: number;
      stroke: string;
      lineWidth: number;
      dash?: number[];
    }
  | { op: "label"; x: number; y: number; text: string; fill: string }
  | { op: "cross"; x: number; y: number; size: number; stroke: string };

/** Hue-rotated colors so each association candidate stays tellable apart. */
export function candidateColor(index: number): string {
  return `hsl(${(index * 67) % 360} 85% 55%)`;
}

export const SUBJECT_COLOR = "#f5b301";
export const DETECTION_COLOR = "#7a8799";
export const DRAFT_COLOR = "#3ddc84";
export const BACKDROP = "#14181d";

export interface SceneContext {
  subjectDets?: number[];
  /** det_ids per candidate, in the order the candidates were served. */
  candidateGroups?: number[][];
  draftAnchor?: Point | null;
  draftBox?: Box | null;
}

export function renderScene(
  scene: VectorScene,
  canvasWidth: number,
  canvasHeight: number,
  context: SceneContext = {},
): DrawOp[] {
  const t = fitTransform(scene.image_width, scene.image_height, canvasWidth, canvasHeight);
  const ops: DrawOp[] = [
    { op: "clear", width: canvasWidth, height: canvasHeight, fill: BACKDROP },
  ];
  const subjects = new Set(context.subjectDets ?? []);
  const candidateOf = new Map<number, number>();
  (context.candidateGroups ?? []).forEach((group, index) => {
    for (const detId of group) candidateOf.set(detId, index);
  });

  const boxRect = (box: Box) => {
    const corner = toCanvas(t, { x: box[0], y: box[1] });
    return { x: corner.x, y: corner.y, w: box[2] * t.scale, h: box[3] * t.scale };
  };

  for (const det of scene.detections) {
    const rect = boxRect(det.box);
    let stroke = DETECTION_COLOR;
    let lineWidth = 1;
    const candidate = candidateOf.get(det.det_id);
    if (candidate !== undefined) {
      stroke = candidateColor(candidate);
      lineWidth = 2;
    }
    if (subjects.has(det.det_id)) {
      stroke = SUBJECT_COLOR;
      lineWidth = 3;
    }
    ops.push({ op: "rect", ...rect, stroke, lineWidth });
    ops.push({
      op: "label",
      x: rect.x,
      y: rect.y - 3,
      text: `#${det.det_id} ${det.confidence.toFixed(2)}`,
      fill: stroke,
    });
  }

  if (context.draftBox) {
    ops.push({
      op: "rect",
      ...boxRect(context.draftBox),
      stroke: DRAFT_COLOR,
      lineWidth: 2,
      dash: [6, 4],
    });
  }
  if (context.draftAnchor) {
    const p = toCanvas(t, context.draftAnchor);
    ops.push({ op: "cross", x: p.x, y: p.y, size: 6, stroke: DRAFT_COLOR });
  }
  return ops;
}

/** Minimal slice of CanvasRenderingContext2D the replay needs. */
export interface DrawTarget {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  fillRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
  setLineDash(segments: number[]): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
}

export function applyDrawOps(ctx: DrawTarget, ops: DrawOp[]): void {
  for (const op of ops) {
    switch (op.op) {
      case "clear":
        ctx.fillStyle = op.fill;
        ctx.fillRect(0, 0, op.width, op.height);
        break;
      case "rect":
        ctx.strokeStyle = op.stroke;
        ctx.lineWidth = op.lineWidth;
        ctx.setLineDash(op.dash ?? []);
        ctx.strokeRect(op.x, op.y, op.w, op.h);
        ctx.setLineDash([]);
        break;
      case "label":
        ctx.fillStyle = op.fill;
        ctx.font = "11px system-ui, sans-serif";
        ctx.fillText(op.text, op.x, op.y);
        break;
      case "cross":
        ctx.strokeStyle = op.stroke;
        ctx.lineWidth = 1;
        ctx.beginPath();
        ctx.moveTo(op.x - op.size, op.y);
        ctx.lineTo(op.x + op.size, op.y);
        ctx.moveTo(op.x, op.y - op.size);
        ctx.lineTo(op.x, op.y + op.size);
        ctx.stroke();
        break;
    }
  }
}
