"""Simulated annotator that answers queries from ground truth, plus the cost
model for labeling a sequence entirely by hand."""

from __future__ import annotations

from typing import Optional

from .active import AnnotationQuery, AnnotatorResponse
from .core import Box, LabelSet, Sequence, iou


def full_manual_cost(gt: LabelSet) -> int:
    """Clicks to label everything manually: two per box, plus one linking
    click for every consecutive-frame pair inside each track's presence runs."""
    boxes = [e for e in gt.entries if e.evaluable]
    cost = 2 * len(boxes)
    by_track: dict[int, list[int]] = {}
    for e in boxes:
        by_track.setdefault(e.track_id, []).append(e.frame)
    for frames in by_track.values():
        frames.sort()
        cost += sum(1 for a, b in zip(frames, frames[1:]) if b - a == 1)
    return cost


class OracleAnnotator:
    """Ground-truth-backed annotator.

    Validation accepts a subject iff a strict majority of its detections
    overlap some ground-truth box at the IoU threshold (ties reject).
    Association answers with the candidate whose dominant ground-truth
    identity equals the subject's; box refinement snaps to the best
    overlapping ground-truth box or rejects the detection.
    """

    def __init__(self, seq: Sequence, iou_threshold: float = 0.5):
        if seq.ground_truth is None:
            raise ValueError("the oracle needs a sequence with ground truth")
        self.threshold = iou_threshold
        self._dets = seq.detection_table()
        gt_by_frame = seq.ground_truth.by_frame()
        self._identity: dict[int, Optional[int]] = {}
        self._gt_box: dict[int, Box] = {}
        for d in seq.detections:
            best_iou, best_track, best_box = 0.0, None, None
            for e in sorted(gt_by_frame.get(d.frame, []), key=lambda e: e.track_id):
                if not e.evaluable:
                    continue
                v = iou(d.box, e.box)
                if v > best_iou:
                    best_iou, best_track, best_box = v, e.track_id, e.box
            if best_iou >= self.threshold:
                self._identity[d.det_id] = best_track
                self._gt_box[d.det_id] = best_box
            else:
                self._identity[d.det_id] = None

    def identity_of(self, det_id: int) -> Optional[int]:
        return self._identity.get(det_id)

    def _dominant_identity(self, det_ids) -> Optional[int]:
        votes: dict[int, int] = {}
        for det_id in det_ids:
            t = self._identity.get(det_id)
            if t is not None:
                votes[t] = votes.get(t, 0) + 1
        if not votes:
            return None
        return min(votes, key=lambda t: (-votes[t], t))

    def answer(self, query: AnnotationQuery) -> AnnotatorResponse:
        if query.kind == "validate-node":
            matched = sum(
                1 for d in query.subject_dets if self._identity.get(d) is not None
            )
            action = "accept" if 2 * matched > len(query.subject_dets) else "reject"
            return AnnotatorResponse(query.query_id, action, responder="oracle")

        if query.kind == "refine-box":
            box = self._gt_box.get(query.subject)
            if box is None:
                return AnnotatorResponse(query.query_id, "reject", responder="oracle")
            return AnnotatorResponse(query.query_id, "box", box=box, responder="oracle")

        subject_id = self._dominant_identity(query.subject_dets)
        if subject_id is None:
            return AnnotatorResponse(query.query_id, "none", responder="oracle")
        subject_last = max(self._dets[d].frame for d in query.subject_dets)
        matches = []
        for c in query.candidates:
            if self._dominant_identity(c.det_ids) == subject_id:
                first = min(self._dets[d].frame for d in c.det_ids)
                matches.append((abs(first - subject_last), c.cluster_id))
        if not matches:
            return AnnotatorResponse(query.query_id, "none", responder="oracle")
        matches.sort()
        return AnnotatorResponse(
            query.query_id, "choose", choice=matches[0][1], responder="oracle"
        )
