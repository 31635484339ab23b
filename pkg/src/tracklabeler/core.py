"""Core domain types: detections, sequences, label sets, trajectories.

All types are immutable. Boxes are (left, top, width, height) in real pixel
coordinates; frames are 1-indexed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence as Seq

import numpy as np

EMBEDDING_NORM_TOL = 1e-6

DETECTION_PROVENANCE = frozenset(
    {"detector", "ground-truth", "annotator-refined", "interpolated", "synthetic"}
)
LABEL_PROVENANCE = frozenset({"pseudo", "human", "interpolated", "ground-truth"})


class Box(NamedTuple):
    """Axis-aligned box, (left, top, width, height) in pixels."""

    left: float
    top: float
    width: float
    height: float

    def __iter__(self):
        return iter((self.left, self.top, self.width, self.height))

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.left + self.width / 2.0, self.top + self.height / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.width, self.height)


def iou(a: Box, b: Box) -> float:
    """Intersection-over-union of two boxes. Degenerate boxes give 0."""
    ix = min(a.right, b.right) - max(a.left, b.left)
    if ix <= 0.0:
        return 0.0
    iy = min(a.bottom, b.bottom) - max(a.top, b.top)
    if iy <= 0.0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def _freeze_embedding(vec) -> Optional[np.ndarray]:
    if vec is None:
        return None
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("embedding must be a non-empty 1-d vector")
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > EMBEDDING_NORM_TOL:
        raise ValueError(f"embedding norm {norm!r} deviates from 1 by more than {EMBEDDING_NORM_TOL}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Detection:
    """A single detector (or synthetic / annotator) box on one frame."""

    det_id: int
    frame: int
    box: Box
    confidence: float
    embedding: Optional[np.ndarray] = None
    provenance: str = "detector"

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError(f"frame must be >= 1, got {self.frame}")
        box = self.box if isinstance(self.box, Box) else Box(*self.box)
        object.__setattr__(self, "box", box)
        if not (box.width > 0.0 and box.height > 0.0):
            raise ValueError(f"box must have positive size, got {box}")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.provenance not in DETECTION_PROVENANCE:
            raise ValueError(f"unknown detection provenance {self.provenance!r}")
        object.__setattr__(self, "embedding", _freeze_embedding(self.embedding))

    def with_box(self, box: Box, provenance: str = "annotator-refined") -> "Detection":
        return Detection(
            det_id=self.det_id,
            frame=self.frame,
            box=Box(*box),
            confidence=self.confidence,
            embedding=self.embedding,
            provenance=provenance,
        )


@dataclass(frozen=True)
class LabelEntry:
    """One labeled box: a track identity on one frame.

    `score` carries the solver's confidence for machine-made entries and is
    None for ground-truth / human boxes. `evaluable` is False for retained but
    non-scored classes (non-pedestrian GT rows).
    """

    frame: int
    track_id: int
    box: Box
    provenance: str = "ground-truth"
    evaluable: bool = True
    score: Optional[float] = None

    def __post_init__(self):
        if self.frame < 1:
            raise ValueError(f"frame must be >= 1, got {self.frame}")
        box = self.box if isinstance(self.box, Box) else Box(*self.box)
        object.__setattr__(self, "box", box)
        if not (box.width > 0.0 and box.height > 0.0):
            raise ValueError(f"label box must have positive size, got {box}")
        if self.provenance not in LABEL_PROVENANCE:
            raise ValueError(f"unknown label provenance {self.provenance!r}")


@dataclass(frozen=True)
class LabelSet:
    """All labeled boxes of one sequence; at most one entry per (frame, track)."""

    seq_id: str
    entries: tuple[LabelEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        seen = set()
        for e in entries:
            key = (e.frame, e.track_id)
            if key in seen:
                raise ValueError(f"duplicate label entry for frame={e.frame} track={e.track_id}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.entries)

    def evaluable_entries(self) -> tuple[LabelEntry, ...]:
        return tuple(e for e in self.entries if e.evaluable)

    def by_frame(self) -> dict[int, list[LabelEntry]]:
        out: dict[int, list[LabelEntry]] = {}
        for e in self.entries:
            out.setdefault(e.frame, []).append(e)
        return out

    def track_ids(self) -> list[int]:
        return sorted({e.track_id for e in self.entries})

    def track_frames(self) -> dict[int, list[int]]:
        """Sorted frame list per track id."""
        out: dict[int, list[int]] = {}
        for e in self.entries:
            out.setdefault(e.track_id, []).append(e.frame)
        for frames in out.values():
            frames.sort()
        return out

    def sorted(self) -> "LabelSet":
        return LabelSet(self.seq_id, tuple(sorted(self.entries, key=lambda e: (e.frame, e.track_id))))


@dataclass(frozen=True)
class Trajectory:
    """An ordered run of detections sharing one identity."""

    track_id: int
    members: tuple[tuple[int, int], ...]  # (frame, det_id), strictly increasing frames

    def __post_init__(self):
        members = tuple((int(f), int(d)) for f, d in self.members)
        object.__setattr__(self, "members", members)
        frames = [f for f, _ in members]
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise ValueError("trajectory members must have strictly increasing frames")

    @property
    def frames(self) -> tuple[int, ...]:
        return tuple(f for f, _ in self.members)

    @property
    def det_ids(self) -> tuple[int, ...]:
        return tuple(d for _, d in self.members)

    @property
    def first_frame(self) -> int:
        return self.members[0][0]

    @property
    def last_frame(self) -> int:
        return self.members[-1][0]


@dataclass(frozen=True)
class Sequence:
    """A video sequence: metadata, detections, optional ground truth."""

    seq_id: str
    frame_count: int
    image_width: int
    image_height: int
    frame_rate: float = 30.0
    detections: tuple[Detection, ...] = ()
    ground_truth: Optional[LabelSet] = None

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ValueError("image size must be positive")
        dets = tuple(self.detections)
        object.__setattr__(self, "detections", dets)
        ids = set()
        for d in dets:
            if d.det_id in ids:
                raise ValueError(f"duplicate det_id {d.det_id}")
            ids.add(d.det_id)
            if d.frame > self.frame_count:
                raise ValueError(f"detection frame {d.frame} beyond frame_count {self.frame_count}")
        if self.ground_truth is not None:
            for e in self.ground_truth.entries:
                if e.frame > self.frame_count:
                    raise ValueError(f"label frame {e.frame} beyond frame_count {self.frame_count}")

    def detections_by_frame(self) -> dict[int, list[Detection]]:
        out: dict[int, list[Detection]] = {}
        for d in self.detections:
            out.setdefault(d.frame, []).append(d)
        return out

    def detection_table(self) -> dict[int, Detection]:
        return {d.det_id: d for d in self.detections}

    def with_detections(self, detections: Iterable[Detection]) -> "Sequence":
        return Sequence(
            seq_id=self.seq_id,
            frame_count=self.frame_count,
            image_width=self.image_width,
            image_height=self.image_height,
            frame_rate=self.frame_rate,
            detections=tuple(detections),
            ground_truth=self.ground_truth,
        )
