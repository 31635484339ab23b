"""MOT-challenge-style text IO, sequence metadata, and embedding sidecars.

Label/detection rows follow the usual comma layout
``frame,id,bb_left,bb_top,bb_width,bb_height,conf,class,visibility`` with
1-indexed frames and ``id = -1`` for raw detections. Written numbers carry at
most 4 decimal places with trailing zeros trimmed, so output bytes are
deterministic and re-reading a written file is a fixed point.
"""

from __future__ import annotations

import configparser
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import Box, Detection, LabelEntry, LabelSet, Sequence

EMBEDDING_MAGIC = b"EMB1"
_EMBEDDING_HEADER = struct.Struct("<4sIQ")  # magic, dim, count -> 16 bytes


class MotParseError(ValueError):
    """A structurally malformed row (wrong arity / non-numeric field)."""

    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


@dataclass(frozen=True)
class RejectedRow:
    """A parseable row dropped for bad geometry; load continues."""

    line_no: int
    reason: str
    raw: str


@dataclass
class MotReadResult:
    detections: list[Detection] = field(default_factory=list)
    entries: list[LabelEntry] = field(default_factory=list)
    rejected: list[RejectedRow] = field(default_factory=list)


def format_number(v: float) -> str:
    """Render with <= 4 decimals, trimming trailing zeros ('1.0000' -> '1')."""
    text = f"{float(v):.4f}"
    text = text.rstrip("0").rstrip(".")
    return text if text not in ("", "-0") else "0"


def _parse_fields(path, line_no: int, line: str, min_fields: int) -> list[float]:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) < min_fields:
        raise MotParseError(path, line_no, f"expected >= {min_fields} fields, got {len(parts)}")
    values = []
    for i, p in enumerate(parts):
        if p == "" and i >= min_fields:
            continue
        try:
            values.append(float(p))
        except ValueError:
            raise MotParseError(path, line_no, f"non-numeric field {i + 1}: {p!r}") from None
    return values


def _int_field(path, line_no: int, value: float, name: str) -> int:
    if value != int(value):
        raise MotParseError(path, line_no, f"{name} must be integral, got {value!r}")
    return int(value)


def read_mot_file(path, kind: str = "detections") -> MotReadResult:
    """Read a detection or ground-truth file.

    Malformed rows raise MotParseError with the line number. Rows with
    non-positive width/height are collected in ``rejected`` and skipped.
    Ground-truth rows of class != 1 are retained but marked non-evaluable.
    """
    if kind not in ("detections", "ground-truth"):
        raise ValueError(f"kind must be 'detections' or 'ground-truth', got {kind!r}")
    path = Path(path)
    result = MotReadResult()
    next_det_id = 1
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            values = _parse_fields(path, line_no, line, min_fields=7)
            frame = _int_field(path, line_no, values[0], "frame")
            if frame < 1:
                raise MotParseError(path, line_no, f"frame must be >= 1, got {frame}")
            track = _int_field(path, line_no, values[1], "id")
            l, t, w, h = values[2:6]
            if w <= 0.0 or h <= 0.0:
                result.rejected.append(RejectedRow(line_no, "non-positive box size", line))
                continue
            box = Box(l, t, w, h)
            if kind == "detections":
                conf = min(max(values[6], 0.0), 1.0)
                result.detections.append(
                    Detection(det_id=next_det_id, frame=frame, box=box, confidence=conf)
                )
                next_det_id += 1
            else:
                cls = _int_field(path, line_no, values[7], "class") if len(values) >= 8 else 1
                result.entries.append(
                    LabelEntry(
                        frame=frame,
                        track_id=track,
                        box=box,
                        provenance="ground-truth",
                        evaluable=(cls == 1),
                    )
                )
    return result


def provenance_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".prov")


def write_labels(labels: LabelSet, path) -> Path:
    """Write labels as ground-truth-shaped rows plus a provenance sidecar.

    Rows are sorted by (frame, track_id); conf/class/visibility columns are 1.
    Output bytes depend only on the label set.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = sorted(labels.entries, key=lambda e: (e.frame, e.track_id))
    lines = []
    prov_lines = []
    for e in entries:
        box_txt = ",".join(format_number(v) for v in e.box)
        lines.append(f"{e.frame},{e.track_id},{box_txt},1,1,1\n")
        prov_lines.append(f"{e.frame},{e.track_id},{e.provenance}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(lines)
    with open(provenance_sidecar_path(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(prov_lines)
    return path


def read_labels(path, seq_id: str = "") -> LabelSet:
    """Read a labels/GT file back into a LabelSet, merging any sidecar provenance."""
    path = Path(path)
    result = read_mot_file(path, kind="ground-truth")
    prov_path = provenance_sidecar_path(path)
    prov: dict[tuple[int, int], str] = {}
    if prov_path.exists():
        with open(prov_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                f_txt, t_txt, p = line.split(",", 2)
                prov[(int(f_txt), int(t_txt))] = p
    entries = []
    for e in result.entries:
        p = prov.get((e.frame, e.track_id))
        if p is not None and p != e.provenance:
            e = LabelEntry(e.frame, e.track_id, e.box, p, e.evaluable, e.score)
        entries.append(e)
    seq = seq_id or path.stem
    return LabelSet(seq, tuple(entries)).sorted()


def write_embeddings(path, items: Iterable[tuple[int, np.ndarray]]) -> Path:
    """Write det_id -> embedding records (16-byte header, little-endian float32)."""
    path = Path(path)
    items = list(items)
    if items:
        dim = int(np.asarray(items[0][1]).size)
    else:
        dim = 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_EMBEDDING_HEADER.pack(EMBEDDING_MAGIC, dim, len(items)))
        for det_id, vec in items:
            arr = np.asarray(vec, dtype="<f4")
            if arr.size != dim:
                raise ValueError(f"embedding for det {det_id} has dim {arr.size}, expected {dim}")
            fh.write(struct.pack("<q", int(det_id)))
            fh.write(arr.tobytes())
    return path


def read_embeddings(path) -> dict[int, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(_EMBEDDING_HEADER.size)
        if len(header) != _EMBEDDING_HEADER.size:
            raise ValueError(f"{path}: truncated embedding header")
        magic, dim, count = _EMBEDDING_HEADER.unpack(header)
        if magic != EMBEDDING_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        out: dict[int, np.ndarray] = {}
        record = struct.Struct(f"<q{dim}f")
        for _ in range(count):
            blob = fh.read(record.size)
            if len(blob) != record.size:
                raise ValueError(f"{path}: truncated embedding record")
            values = record.unpack(blob)
            out[int(values[0])] = np.asarray(values[1:], dtype=np.float64)
    return out


def write_seqinfo(seq: Sequence, path) -> Path:
    cp = configparser.ConfigParser()
    cp["Sequence"] = {
        "name": seq.seq_id,
        "imWidth": str(seq.image_width),
        "imHeight": str(seq.image_height),
        "frameRate": format_number(seq.frame_rate),
        "seqLength": str(seq.frame_count),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        cp.write(fh)
    return path


def read_seqinfo(path) -> dict:
    cp = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        cp.read_file(fh)
    sec = cp["Sequence"]
    return {
        "name": sec.get("name", "seq"),
        "image_width": sec.getint("imWidth"),
        "image_height": sec.getint("imHeight"),
        "frame_rate": sec.getfloat("frameRate", 30.0),
        "frame_count": sec.getint("seqLength"),
    }


def save_sequence(seq: Sequence, directory) -> Path:
    """Write seqinfo.ini, det.txt (+ embeddings.bin), and gt.txt into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_seqinfo(seq, directory / "seqinfo.ini")
    det_lines = []
    emb_items: list[tuple[int, np.ndarray]] = []
    for d in sorted(seq.detections, key=lambda d: (d.frame, d.det_id)):
        box_txt = ",".join(format_number(v) for v in d.box)
        det_lines.append(f"{d.frame},-1,{box_txt},{format_number(d.confidence)}\n")
        if d.embedding is not None:
            emb_items.append((d.det_id, d.embedding))
    with open(directory / "det.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(det_lines)
    if emb_items:
        write_embeddings(directory / "embeddings.bin", emb_items)
    if seq.ground_truth is not None:
        write_labels(seq.ground_truth, directory / "gt.txt")
    return directory


def load_sequence(directory, seq_id: Optional[str] = None) -> Sequence:
    """Load a sequence directory written by save_sequence (gt/embeddings optional)."""
    directory = Path(directory)
    info = read_seqinfo(directory / "seqinfo.ini")
    name = seq_id or info["name"]
    det_path = directory / "det.txt"
    detections: list[Detection] = []
    if det_path.exists():
        result = read_mot_file(det_path, kind="detections")
        detections = result.detections
        emb_path = directory / "embeddings.bin"
        if emb_path.exists():
            emb = read_embeddings(emb_path)
            detections = [
                Detection(d.det_id, d.frame, d.box, d.confidence, emb.get(d.det_id), d.provenance)
                for d in detections
            ]
    gt = None
    gt_path = directory / "gt.txt"
    if gt_path.exists():
        gt = read_labels(gt_path, seq_id=name)
    return Sequence(
        seq_id=name,
        frame_count=info["frame_count"],
        image_width=info["image_width"],
        image_height=info["image_height"],
        frame_rate=info["frame_rate"],
        detections=tuple(detections),
        ground_truth=gt,
    )
