"""Synthetic tracking-world generator.

Produces sequences with exact ground truth plus a configurable detector
imitation: misses, background false positives, box jitter, a confidence model
that sinks with jitter and occlusion, and unit-norm appearance embeddings with
per-identity means. Everything is a pure function of the config (seed
included), so a config file fully determines the output.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .core import Box, Detection, LabelEntry, LabelSet, Sequence, iou

MOTION_MODELS = ("constant-velocity", "random-walk", "dance")

# an occlusion this severe suppresses the detection outright
OCCLUSION_HIDE_THRESHOLD = 0.7
# synthetic FPs are background clutter: keep them off the GT boxes
FP_MAX_GT_IOU = 0.3
_FP_PLACEMENT_TRIES = 30


@dataclass(frozen=True)
class WorldConfig:
    """Full description of a synthetic world; `seed` pins every random draw."""

    seed: int = 0
    name: str = "synth"
    n_frames: int = 512
    image_width: int = 1920
    image_height: int = 1080
    frame_rate: float = 30.0
    n_objects: int = 8
    box_width_range: tuple[float, float] = (36.0, 72.0)
    box_height_range: tuple[float, float] = (80.0, 160.0)
    motion: str = "constant-velocity"
    speed: float = 3.0
    motion_noise: float = 1.0
    cloud_radius: float = 180.0
    occlusion_rate: float = 0.0
    occlusion_mean_len: float = 4.0
    fn_rate: float = 0.0
    fp_rate: float = 0.0
    jitter_sigma: float = 0.0
    conf_base: float = 0.9
    conf_jitter_coeff: float = 0.4
    conf_occlusion_coeff: float = 0.5
    conf_noise: float = 0.05
    fp_conf_mean: float = 0.45
    fp_conf_sigma: float = 0.15
    embedding_dim: int = 16
    sigma_app: float = 0.1

    def __post_init__(self):
        if self.motion not in MOTION_MODELS:
            raise ValueError(f"unknown motion model {self.motion!r}, expected one of {MOTION_MODELS}")
        for name in ("fn_rate", "occlusion_rate"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("fp_rate", "jitter_sigma", "sigma_app", "conf_noise", "speed", "motion_noise"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_objects < 1 or self.n_frames < 1:
            raise ValueError("need at least one object and one frame")
        if self.embedding_dim < 2:
            raise ValueError("embedding_dim must be >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["box_width_range"] = list(self.box_width_range)
        d["box_height_range"] = list(self.box_height_range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "WorldConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown world config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("box_width_range", "box_height_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "WorldConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class DomainShift:
    """Additive config deltas (and optional motion swap) defining a target domain."""

    motion: Optional[str] = None
    d_sigma_app: float = 0.0
    d_jitter: float = 0.0
    d_fp_rate: float = 0.0
    d_fn_rate: float = 0.0
    d_occlusion: float = 0.0
    d_speed: float = 0.0
    d_motion_noise: float = 0.0
    d_fp_conf_mean: float = 0.0
    seed: Optional[int] = None
    name: Optional[str] = None


class ShiftResult(NamedTuple):
    config: WorldConfig
    clamped: tuple[str, ...]


def domain_shift(config: WorldConfig, shift: DomainShift) -> ShiftResult:
    """Apply a shift; rates leaving their valid range are clamped and reported."""
    clamped: list[str] = []

    def bounded(name: str, value: float, lo: float, hi: float) -> float:
        if value < lo or value > hi:
            fixed = min(max(value, lo), hi)
            clamped.append(f"{name} clamped from {value:g} to {fixed:g}")
            return fixed
        return value

    updates = {
        "sigma_app": bounded("sigma_app", config.sigma_app + shift.d_sigma_app, 0.0, math.inf),
        "jitter_sigma": bounded("jitter_sigma", config.jitter_sigma + shift.d_jitter, 0.0, math.inf),
        "fp_rate": bounded("fp_rate", config.fp_rate + shift.d_fp_rate, 0.0, math.inf),
        "fn_rate": bounded("fn_rate", config.fn_rate + shift.d_fn_rate, 0.0, 1.0),
        "occlusion_rate": bounded("occlusion_rate", config.occlusion_rate + shift.d_occlusion, 0.0, 1.0),
        "speed": bounded("speed", config.speed + shift.d_speed, 0.0, math.inf),
        "motion_noise": bounded("motion_noise", config.motion_noise + shift.d_motion_noise, 0.0, math.inf),
        "fp_conf_mean": bounded("fp_conf_mean", config.fp_conf_mean + shift.d_fp_conf_mean, 0.0, 1.0),
    }
    if shift.motion is not None:
        updates["motion"] = shift.motion
    if shift.seed is not None:
        updates["seed"] = shift.seed
    if shift.name is not None:
        updates["name"] = shift.name
    return ShiftResult(replace(config, **updates), tuple(clamped))


def _fold(value: float, lo: float, hi: float) -> float:
    """Reflect value into [lo, hi] (bouncing motion)."""
    if hi <= lo:
        return (lo + hi) / 2.0
    span = hi - lo
    q = math.fmod(value - lo, 2.0 * span)
    if q < 0.0:
        q += 2.0 * span
    return lo + (span - abs(q - span)) if q > span else lo + q


def _object_centers(cfg: WorldConfig, sizes: np.ndarray, world_rng, motion_rng) -> np.ndarray:
    """(n_objects, n_frames, 2) array of box centers, folded into the image."""
    n, t = cfg.n_objects, cfg.n_frames
    centers = np.zeros((n, t, 2))
    half = sizes / 2.0
    lo = half.copy()
    hi = np.stack([cfg.image_width - half[:, 0], cfg.image_height - half[:, 1]], axis=1)

    if cfg.motion == "constant-velocity":
        start = world_rng.uniform(lo + 1.0, np.maximum(hi - 1.0, lo + 1.0))
        vel = motion_rng.uniform(-cfg.speed, cfg.speed, size=(n, 2))
        for f in range(t):
            centers[:, f, :] = start + vel * f
    elif cfg.motion == "random-walk":
        start = world_rng.uniform(lo + 1.0, np.maximum(hi - 1.0, lo + 1.0))
        steps = motion_rng.normal(0.0, cfg.motion_noise, size=(n, t, 2))
        steps[:, 0, :] = 0.0
        centers = start[:, None, :] + np.cumsum(steps, axis=1)
    else:  # dance: shared group drift + slow per-object orbits + per-frame jitter
        cx = cfg.image_width / 2.0
        cy = cfg.image_height / 2.0
        amp = max(8.0 * cfg.speed, 1.0)
        omega = cfg.speed / amp if amp > 0 else 0.0
        phase = motion_rng.uniform(0.0, 2.0 * math.pi, size=2)
        frames = np.arange(t)
        group = np.stack(
            [
                cx + amp * np.sin(omega * frames + phase[0]),
                cy + amp * np.sin(0.7 * omega * frames + phase[1]),
            ],
            axis=1,
        )
        radii = world_rng.uniform(0.15, 1.0, size=n) * cfg.cloud_radius
        theta0 = world_rng.uniform(0.0, 2.0 * math.pi, size=n)
        spin = motion_rng.uniform(-1.0, 1.0, size=n) * (2.0 * math.pi / max(t, 64))
        jitter = motion_rng.normal(0.0, cfg.motion_noise, size=(n, t, 2))
        for i in range(n):
            ang = theta0[i] + spin[i] * frames
            centers[i, :, 0] = group[:, 0] + radii[i] * np.cos(ang) + jitter[i, :, 0]
            centers[i, :, 1] = group[:, 1] + radii[i] * np.sin(ang) + jitter[i, :, 1]

    for i in range(n):
        for f in range(t):
            centers[i, f, 0] = _fold(centers[i, f, 0], lo[i, 0], hi[i, 0])
            centers[i, f, 1] = _fold(centers[i, f, 1], lo[i, 1], hi[i, 1])
    return centers


def _occlusion_severity(cfg: WorldConfig, occl_rng) -> np.ndarray:
    """(n_objects, n_frames) occlusion severity, 0 where unoccluded."""
    sev = np.zeros((cfg.n_objects, cfg.n_frames))
    if cfg.occlusion_rate <= 0.0:
        return sev
    p_end = 1.0 / max(cfg.occlusion_mean_len, 1.0)
    for i in range(cfg.n_objects):
        f = 0
        while f < cfg.n_frames:
            if occl_rng.random() < cfg.occlusion_rate:
                length = int(occl_rng.geometric(p_end))
                severity = occl_rng.uniform(0.3, 1.0)
                sev[i, f : f + length] = severity
                f += length
            else:
                f += 1
    return sev


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec = np.zeros_like(vec)
        vec[0] = 1.0
        return vec
    return vec / norm


def generate(cfg: WorldConfig) -> Sequence:
    """Generate the world: ground truth for every object on every frame, plus
    detections degraded per the noise settings. With all noise at zero the
    detection boxes equal the GT boxes exactly."""
    ss = np.random.SeedSequence([int(cfg.seed), 0x5EED])
    world_rng, motion_rng, occl_rng, det_rng, fp_rng, emb_rng = (
        np.random.default_rng(c) for c in ss.spawn(6)
    )

    widths = world_rng.uniform(*cfg.box_width_range, size=cfg.n_objects)
    heights = world_rng.uniform(*cfg.box_height_range, size=cfg.n_objects)
    sizes = np.stack([widths, heights], axis=1)
    centers = _object_centers(cfg, sizes, world_rng, motion_rng)
    severity = _occlusion_severity(cfg, occl_rng)
    identity_mean = np.stack(
        [_unit(emb_rng.normal(size=cfg.embedding_dim)) for _ in range(cfg.n_objects)]
    )

    gt_entries: list[LabelEntry] = []
    detections: list[Detection] = []
    next_id = 1
    for f in range(cfg.n_frames):
        frame = f + 1
        frame_gt_boxes: list[Box] = []
        for i in range(cfg.n_objects):
            w, h = sizes[i]
            cx, cy = centers[i, f]
            box = Box(cx - w / 2.0, cy - h / 2.0, w, h)
            frame_gt_boxes.append(box)
            gt_entries.append(LabelEntry(frame, i + 1, box, "ground-truth"))

        for i in range(cfg.n_objects):
            occ = severity[i, f]
            if occ > OCCLUSION_HIDE_THRESHOLD:
                continue
            if cfg.fn_rate > 0.0 and det_rng.random() < cfg.fn_rate:
                continue
            gt_box = frame_gt_boxes[i]
            if cfg.jitter_sigma > 0.0:
                dl, dt = det_rng.normal(0.0, cfg.jitter_sigma, size=2)
                dw, dh = det_rng.normal(0.0, cfg.jitter_sigma / 2.0, size=2)
            else:
                dl = dt = dw = dh = 0.0
            box = Box(
                gt_box.left + dl,
                gt_box.top + dt,
                max(gt_box.width + dw, 1.0),
                max(gt_box.height + dh, 1.0),
            )
            jitter_rel = math.hypot(dl, dt) / max(gt_box.diagonal, 1e-9)
            noise = det_rng.normal(0.0, cfg.conf_noise) if cfg.conf_noise > 0.0 else 0.0
            conf = (
                cfg.conf_base
                - cfg.conf_jitter_coeff * jitter_rel
                - cfg.conf_occlusion_coeff * occ
                + noise
            )
            conf = min(max(conf, 0.0), 1.0)
            emb = _unit(identity_mean[i] + cfg.sigma_app * emb_rng.normal(size=cfg.embedding_dim))
            detections.append(Detection(next_id, frame, box, conf, emb, "synthetic"))
            next_id += 1

        if cfg.fp_rate > 0.0:
            for _ in range(int(fp_rng.poisson(cfg.fp_rate))):
                placed = None
                for _attempt in range(_FP_PLACEMENT_TRIES):
                    w = fp_rng.uniform(*cfg.box_width_range)
                    h = fp_rng.uniform(*cfg.box_height_range)
                    l = fp_rng.uniform(0.0, max(cfg.image_width - w, 1.0))
                    t = fp_rng.uniform(0.0, max(cfg.image_height - h, 1.0))
                    cand = Box(l, t, w, h)
                    if all(iou(cand, g) < FP_MAX_GT_IOU for g in frame_gt_boxes):
                        placed = cand
                        break
                if placed is None:
                    continue
                conf = min(max(fp_rng.normal(cfg.fp_conf_mean, cfg.fp_conf_sigma), 0.0), 1.0)
                emb = _unit(emb_rng.normal(size=cfg.embedding_dim))
                detections.append(Detection(next_id, frame, placed, conf, emb, "synthetic"))
                next_id += 1

    gt = LabelSet(cfg.name, tuple(gt_entries))
    return Sequence(
        seq_id=cfg.name,
        frame_count=cfg.n_frames,
        image_width=cfg.image_width,
        image_height=cfg.image_height,
        frame_rate=cfg.frame_rate,
        detections=tuple(detections),
        ground_truth=gt,
    )
