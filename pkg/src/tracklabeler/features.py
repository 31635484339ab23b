"""Feature schemas for the detection-validity and identity-association scorers.

Node features describe one detection inside its clip; edge features describe a
directed hypothesis from an earlier track fragment to a later one. Both are
fixed-width vectors consumed by the logistic scorers, and the schema hash
written into serialized scorer params is derived from the name lists below.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Optional, Sequence as Seq

import numpy as np

from .core import Box, Detection, iou

NODE_FEATURE_NAMES = (
    "time_norm",
    "center_x_norm",
    "center_y_norm",
    "width_norm",
    "height_norm",
    "confidence",
    "local_density",
    "peak_neighbor_sim",
)
EDGE_FEATURE_NAMES = (
    "gap_norm",
    "abs_dx_over_height",
    "abs_dy_over_height",
    "abs_log_width_ratio",
    "abs_log_height_ratio",
    "cosine_distance",
    "min_confidence",
    "motion_iou",
)
NODE_DIM = len(NODE_FEATURE_NAMES)
EDGE_DIM = len(EDGE_FEATURE_NAMES)

# neighbor frames consulted for the appearance feature; together with the
# center frame this spans the 10-frame validation window
APPEARANCE_REACH = 5
DENSITY_RADIUS_DIAGONALS = 2.0
DENSITY_CAP = 10.0
COSINE_DISTANCE_SENTINEL = 0.5

FEATURE_SCHEMA_HASH = hashlib.sha256(
    ("|".join(NODE_FEATURE_NAMES) + "//" + "|".join(EDGE_FEATURE_NAMES)).encode()
).hexdigest()[:16]


@dataclass(frozen=True)
class FrameBounds:
    """Image rectangle; spatial features are taken relative to its origin."""

    width: float
    height: float
    origin_x: float = 0.0
    origin_y: float = 0.0


@dataclass(frozen=True)
class ClipBounds:
    """Frame range of a clip; temporal features are clip-relative."""

    first_frame: int
    frame_count: int


def node_features(
    detections: Seq[Detection], frame_bounds: FrameBounds, clip_bounds: ClipBounds
) -> np.ndarray:
    """(n, 8) feature matrix, rows aligned with the input order."""
    n = len(detections)
    out = np.zeros((n, NODE_DIM))
    by_frame: dict[int, list[int]] = {}
    for i, d in enumerate(detections):
        by_frame.setdefault(d.frame, []).append(i)

    emb_by_frame: dict[int, tuple[np.ndarray, list[int]]] = {}
    for frame, idxs in by_frame.items():
        with_emb = [i for i in idxs if detections[i].embedding is not None]
        if with_emb:
            emb_by_frame[frame] = (np.stack([detections[i].embedding for i in with_emb]), with_emb)

    for i, d in enumerate(detections):
        cx, cy = d.box.center
        out[i, 0] = (d.frame - clip_bounds.first_frame) / max(clip_bounds.frame_count, 1)
        out[i, 1] = (cx - frame_bounds.origin_x) / frame_bounds.width
        out[i, 2] = (cy - frame_bounds.origin_y) / frame_bounds.height
        out[i, 3] = d.box.width / frame_bounds.width
        out[i, 4] = d.box.height / frame_bounds.height
        out[i, 5] = d.confidence

        radius = DENSITY_RADIUS_DIAGONALS * d.box.diagonal
        count = 0
        for j in by_frame[d.frame]:
            if j == i:
                continue
            ox, oy = detections[j].box.center
            if math.hypot(ox - cx, oy - cy) <= radius:
                count += 1
        out[i, 6] = min(count, DENSITY_CAP) / DENSITY_CAP

        best = 0.0
        if d.embedding is not None:
            for offset in range(-APPEARANCE_REACH, APPEARANCE_REACH + 1):
                if offset == 0:
                    continue
                got = emb_by_frame.get(d.frame + offset)
                if got is None:
                    continue
                sims = got[0] @ d.embedding
                peak = float(np.max(sims))
                if peak > best:
                    best = peak
        out[i, 7] = best
    return out


def tail_velocity(frames: Seq[int], boxes: Seq[Box], k: int = 3) -> Optional[np.ndarray]:
    """Least-squares per-coordinate velocity over the last <= k boxes.

    Returns d(l, t, w, h)/dframe, or None when fewer than two frames exist.
    """
    frames = list(frames)[-k:]
    boxes = list(boxes)[-k:]
    if len(frames) < 2:
        return None
    f = np.asarray(frames, dtype=np.float64)
    vals = np.asarray([[b.left, b.top, b.width, b.height] for b in boxes])
    f_c = f - f.mean()
    denom = float(f_c @ f_c)
    if denom == 0.0:
        return None
    return (f_c @ (vals - vals.mean(axis=0))) / denom


def edge_feature_vector(
    gap: int,
    span: int,
    box_u: Box,
    box_v: Box,
    emb_u: Optional[np.ndarray],
    emb_v: Optional[np.ndarray],
    conf_u: float,
    conf_v: float,
    velocity_u: Optional[np.ndarray],
) -> np.ndarray:
    """Edge features from the earlier fragment's end toward the later one's start.

    `gap` is later.first_frame - earlier.last_frame (>= 1), `span` the current
    level's temporal extent. Cosine distance falls back to 0.5 and motion IoU
    to 0 when embeddings / a velocity estimate are unavailable.
    """
    if gap < 1:
        raise ValueError(f"edge endpoints must be temporally disjoint, gap={gap}")
    mean_h = (box_u.height + box_v.height) / 2.0
    ux, uy = box_u.center
    vx, vy = box_v.center
    if emb_u is not None and emb_v is not None:
        cos_dist = 1.0 - float(emb_u @ emb_v)
    else:
        cos_dist = COSINE_DISTANCE_SENTINEL
    if velocity_u is not None:
        pred = Box(
            box_u.left + velocity_u[0] * gap,
            box_u.top + velocity_u[1] * gap,
            max(box_u.width + velocity_u[2] * gap, 1e-6),
            max(box_u.height + velocity_u[3] * gap, 1e-6),
        )
        motion = iou(pred, box_v)
    else:
        motion = 0.0
    return np.array(
        [
            gap / max(span, 1),
            abs(vx - ux) / mean_h,
            abs(vy - uy) / mean_h,
            abs(math.log(box_u.width / box_v.width)),
            abs(math.log(box_u.height / box_v.height)),
            cos_dist,
            min(conf_u, conf_v),
            motion,
        ]
    )
