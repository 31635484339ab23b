"""Tracking quality metrics: detection/association accuracy, identity scores.

All metrics compare a predicted label set against ground truth. Per-frame
box matching maximizes match count first and total overlap second, so every
metric is a pure function of the two label sets. Ground-truth entries flagged
non-evaluable are ignored throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import LabelEntry, LabelSet, iou

ALPHA_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))
_CARDINALITY_WEIGHT = 4.0  # any match outranks any sum of overlaps (IoU <= 1)


class EmptyGroundTruthError(ValueError):
    """Metrics are undefined without a single evaluable ground-truth box."""


def match_frame(
    gt: list[LabelEntry], pred: list[LabelEntry], alpha: float
) -> list[tuple[int, int, float]]:
    """Match one frame's boxes at IoU threshold alpha.

    Returns (gt_index, pred_index, iou) triples forming a matching of maximum
    cardinality; among those, total IoU is maximized. Inputs are taken in
    canonical (track_id) order so results are reproducible.
    """
    if not gt or not pred:
        return []
    order_g = sorted(range(len(gt)), key=lambda i: gt[i].track_id)
    order_p = sorted(range(len(pred)), key=lambda j: pred[j].track_id)
    W = np.zeros((len(gt), len(pred)))
    O = np.zeros((len(gt), len(pred)))
    for a, i in enumerate(order_g):
        for b, j in enumerate(order_p):
            v = iou(gt[i].box, pred[j].box)
            if v >= alpha and v > 0.0:
                W[a, b] = _CARDINALITY_WEIGHT + v
                O[a, b] = v
    rows, cols = linear_sum_assignment(W, maximize=True)
    out = []
    for a, b in zip(rows, cols):
        if W[a, b] > 0.0:
            out.append((order_g[a], order_p[b], float(O[a, b])))
    out.sort()
    return out


def _frames_union(gt: LabelSet, pred: LabelSet) -> list[int]:
    frames = {e.frame for e in gt.entries if e.evaluable} | {e.frame for e in pred.entries}
    return sorted(frames)


def _gt_by_frame(gt: LabelSet) -> dict[int, list[LabelEntry]]:
    out: dict[int, list[LabelEntry]] = {}
    for e in sorted(gt.entries, key=lambda e: (e.frame, e.track_id)):
        if e.evaluable:
            out.setdefault(e.frame, []).append(e)
    return out


def _pred_by_frame(pred: LabelSet) -> dict[int, list[LabelEntry]]:
    out: dict[int, list[LabelEntry]] = {}
    for e in sorted(pred.entries, key=lambda e: (e.frame, e.track_id)):
        out.setdefault(e.frame, []).append(e)
    return out


def _require_gt(gt: LabelSet) -> int:
    n = sum(1 for e in gt.entries if e.evaluable)
    if n == 0:
        raise EmptyGroundTruthError("ground truth has no evaluable boxes")
    return n


@dataclass(frozen=True)
class MotaReport:
    mota: float
    false_negatives: int
    false_positives: int
    id_switches: int
    gt_count: int

    def to_dict(self) -> dict:
        return {
            "mota": self.mota,
            "false_negatives": self.false_negatives,
            "false_positives": self.false_positives,
            "id_switches": self.id_switches,
            "gt_count": self.gt_count,
        }


def mota(gt: LabelSet, pred: LabelSet, alpha: float = 0.5) -> MotaReport:
    """Multi-object tracking accuracy at one overlap threshold.

    An identity switch is counted whenever a ground-truth track's matched
    predicted identity differs between two consecutive matched frames.
    """
    n_gt = _require_gt(gt)
    gt_f, pred_f = _gt_by_frame(gt), _pred_by_frame(pred)
    fn = fp = 0
    last_pred_of: dict[int, int] = {}
    idsw = 0
    for frame in _frames_union(gt, pred):
        g = gt_f.get(frame, [])
        p = pred_f.get(frame, [])
        matches = match_frame(g, p, alpha)
        fn += len(g) - len(matches)
        fp += len(p) - len(matches)
        for gi, pi, _ in matches:
            gt_track = g[gi].track_id
            pred_track = p[pi].track_id
            if gt_track in last_pred_of and last_pred_of[gt_track] != pred_track:
                idsw += 1
            last_pred_of[gt_track] = pred_track
    value = 1.0 - (fn + fp + idsw) / n_gt
    return MotaReport(value, fn, fp, idsw, n_gt)


@dataclass(frozen=True)
class Idf1Report:
    idf1: float
    idtp: int
    gt_count: int
    pred_count: int

    def to_dict(self) -> dict:
        return {
            "idf1": self.idf1,
            "idtp": self.idtp,
            "gt_count": self.gt_count,
            "pred_count": self.pred_count,
        }


def idf1(gt: LabelSet, pred: LabelSet, alpha: float = 0.5) -> Idf1Report:
    """Identity F1: one global assignment of predicted tracks to ground-truth
    tracks maximizing per-frame agreements, then F1 over box counts."""
    n_gt = _require_gt(gt)
    gt_f, pred_f = _gt_by_frame(gt), _pred_by_frame(pred)
    n_pred = sum(len(v) for v in pred_f.values())
    overlap: dict[tuple[int, int], int] = {}
    for frame in _frames_union(gt, pred):
        g, p = gt_f.get(frame, []), pred_f.get(frame, [])
        for e in g:
            for q in p:
                if iou(e.box, q.box) >= alpha:
                    key = (e.track_id, q.track_id)
                    overlap[key] = overlap.get(key, 0) + 1
    if overlap:
        gt_ids = sorted({k[0] for k in overlap})
        pr_ids = sorted({k[1] for k in overlap})
        W = np.zeros((len(gt_ids), len(pr_ids)))
        for (gi, pi), n in overlap.items():
            W[gt_ids.index(gi), pr_ids.index(pi)] = n
        rows, cols = linear_sum_assignment(W, maximize=True)
        idtp = int(sum(W[r, c] for r, c in zip(rows, cols)))
    else:
        idtp = 0
    value = 2.0 * idtp / (n_gt + n_pred) if (n_gt + n_pred) else 0.0
    return Idf1Report(value, idtp, n_gt, n_pred)


@dataclass(frozen=True)
class HotaReport:
    hota: float
    det_a: float  # mean over the alpha grid
    ass_a: float
    per_alpha: tuple[tuple[float, float, float, float], ...]  # (alpha, hota, det, ass)

    def to_dict(self) -> dict:
        return {
            "hota": self.hota,
            "det_a": self.det_a,
            "ass_a": self.ass_a,
            "per_alpha": [list(row) for row in self.per_alpha],
        }


def hota(gt: LabelSet, pred: LabelSet) -> HotaReport:
    """Higher-order tracking accuracy, averaged over 19 overlap thresholds.

    Per threshold: detection accuracy is TP/(TP+FN+FP) over per-frame
    matchings; association accuracy averages, over true positives, the
    Jaccard overlap of the matched (gt track, pred track) pair; the score
    is the geometric mean of the two.
    """
    _require_gt(gt)
    gt_f, pred_f = _gt_by_frame(gt), _pred_by_frame(pred)
    frames = _frames_union(gt, pred)
    n_gt_boxes = sum(len(v) for v in gt_f.values())
    n_pred_boxes = sum(len(v) for v in pred_f.values())
    gt_track_sizes: dict[int, int] = {}
    for v in gt_f.values():
        for e in v:
            gt_track_sizes[e.track_id] = gt_track_sizes.get(e.track_id, 0) + 1
    pred_track_sizes: dict[int, int] = {}
    for v in pred_f.values():
        for e in v:
            pred_track_sizes[e.track_id] = pred_track_sizes.get(e.track_id, 0) + 1

    rows = []
    for alpha in ALPHA_GRID:
        tp_pairs: dict[tuple[int, int], int] = {}
        n_tp = 0
        for frame in frames:
            g, p = gt_f.get(frame, []), pred_f.get(frame, [])
            for gi, pi, _ in match_frame(g, p, alpha):
                key = (g[gi].track_id, p[pi].track_id)
                tp_pairs[key] = tp_pairs.get(key, 0) + 1
                n_tp += 1
        fn = n_gt_boxes - n_tp
        fp = n_pred_boxes - n_tp
        det = n_tp / (n_tp + fn + fp) if (n_tp + fn + fp) else 0.0
        if n_tp:
            acc = 0.0
            for (gid, pid), tpa in tp_pairs.items():
                fna = gt_track_sizes[gid] - tpa
                fpa = pred_track_sizes[pid] - tpa
                acc += tpa * (tpa / (tpa + fna + fpa))
            ass = acc / n_tp
        else:
            ass = 0.0
        rows.append((alpha, math.sqrt(det * ass), det, ass))
    h = float(np.mean([r[1] for r in rows]))
    d = float(np.mean([r[2] for r in rows]))
    a = float(np.mean([r[3] for r in rows]))
    return HotaReport(h, d, a, tuple(rows))


@dataclass(frozen=True)
class MetricsReport:
    hota: HotaReport
    mota: MotaReport
    idf1: Idf1Report

    def to_dict(self) -> dict:
        return {"hota": self.hota.to_dict(), "mota": self.mota.to_dict(),
                "idf1": self.idf1.to_dict()}

    def summary(self) -> str:
        return (
            f"HOTA {self.hota.hota:.4f}  DetA {self.hota.det_a:.4f}  "
            f"AssA {self.hota.ass_a:.4f}  MOTA {self.mota.mota:.4f}  "
            f"IDF1 {self.idf1.idf1:.4f}"
        )


def evaluate(gt: LabelSet, pred: LabelSet) -> MetricsReport:
    """All metrics in one pass-friendly report."""
    return MetricsReport(hota(gt, pred), mota(gt, pred), idf1(gt, pred))
