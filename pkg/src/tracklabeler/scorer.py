"""Calibrated logistic scorers for detection validity and identity association.

Two linear heads over the fixed feature schemas, trained with a focal loss by
deterministic (optionally mini-batched) gradient descent. Probabilities are
always clamped to [1e-7, 1 - 1e-7] so downstream entropies never see 0 or 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence as Seq

import numpy as np

from .core import Box, Detection, LabelSet, Sequence, iou
from .features import (
    EDGE_DIM,
    FEATURE_SCHEMA_HASH,
    NODE_DIM,
    ClipBounds,
    FrameBounds,
    node_features,
)

SCORE_EPS = 1e-7
PARAMS_FORMAT = "tracklabeler-scorer v1"
# bias giving sigmoid(b) ~ 1 - 1e-7: the constant-accept fallback head
CONSTANT_ACCEPT_BIAS = 18.0


class SingleClassError(ValueError):
    """Training set contains only one class."""


class SchemaMismatchError(ValueError):
    """Serialized params were produced under a different feature schema."""


class SelfTrainError(RuntimeError):
    """Self-training could not proceed (e.g. the solver produced no tracks)."""


@dataclass(frozen=True)
class ScorerParams:
    """Weights (bias last) for the node and edge heads."""

    node_weights: np.ndarray
    edge_weights: np.ndarray
    version: str = "1"
    provenance: str = "untrained"
    schema: str = FEATURE_SCHEMA_HASH

    def __post_init__(self):
        node = np.asarray(self.node_weights, dtype=np.float64)
        edge = np.asarray(self.edge_weights, dtype=np.float64)
        if node.shape != (NODE_DIM + 1,):
            raise ValueError(f"node weights must have shape ({NODE_DIM + 1},), got {node.shape}")
        if edge.shape != (EDGE_DIM + 1,):
            raise ValueError(f"edge weights must have shape ({EDGE_DIM + 1},), got {edge.shape}")
        for arr in (node, edge):
            if not np.all(np.isfinite(arr)):
                raise ValueError("scorer weights must be finite")
            arr.flags.writeable = False
        object.__setattr__(self, "node_weights", node)
        object.__setattr__(self, "edge_weights", edge)

    @classmethod
    def zeros(cls, provenance: str = "untrained") -> "ScorerParams":
        return cls(np.zeros(NODE_DIM + 1), np.zeros(EDGE_DIM + 1), provenance=provenance)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _score(features: np.ndarray, weights: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    z = x @ weights[:-1] + weights[-1]
    return np.clip(sigmoid(z), SCORE_EPS, 1.0 - SCORE_EPS)


def score_nodes(features: np.ndarray, params: ScorerParams) -> np.ndarray:
    """Validity probabilities for node feature rows, clamped away from {0, 1}."""
    return _score(features, params.node_weights)


def score_edges(features: np.ndarray, params: ScorerParams) -> np.ndarray:
    """Same-identity probabilities for edge feature rows."""
    return _score(features, params.edge_weights)


def focal_loss(p: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """Per-sample focal loss; gamma = 0 recovers cross-entropy."""
    p = np.clip(np.asarray(p, dtype=np.float64), SCORE_EPS, 1.0 - SCORE_EPS)
    y = np.asarray(y, dtype=np.float64)
    return -y * (1.0 - p) ** gamma * np.log(p) - (1.0 - y) * p**gamma * np.log(1.0 - p)


def _focal_grad_z(p: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """d focal / d logit, evaluated at p = sigmoid(logit)."""
    pos = gamma * p * (1.0 - p) ** gamma * np.log(p) - (1.0 - p) ** (gamma + 1.0)
    neg = p ** (gamma + 1.0) - gamma * (1.0 - p) * p**gamma * np.log(1.0 - p)
    return y * pos + (1.0 - y) * neg


def _design(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    return np.hstack([X, np.ones((X.shape[0], 1))])


def focal_objective(
    weights: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: Optional[np.ndarray] = None,
    gamma: float = 1.0,
    weight_decay: float = 0.0,
) -> float:
    """Weighted-mean focal loss plus L2 decay on the non-bias weights."""
    Xb = _design(X)
    w = np.ones(Xb.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    p = np.clip(sigmoid(Xb @ weights), SCORE_EPS, 1.0 - SCORE_EPS)
    loss = float(np.sum(w * focal_loss(p, y, gamma)) / np.sum(w))
    return loss + 0.5 * weight_decay * float(weights[:-1] @ weights[:-1])


def focal_objective_grad(
    weights: np.ndarray,
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: Optional[np.ndarray] = None,
    gamma: float = 1.0,
    weight_decay: float = 0.0,
) -> np.ndarray:
    """Analytic gradient of focal_objective w.r.t. the weight vector."""
    Xb = _design(X)
    w = np.ones(Xb.shape[0]) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    p = np.clip(sigmoid(Xb @ weights), SCORE_EPS, 1.0 - SCORE_EPS)
    gz = _focal_grad_z(p, np.asarray(y, dtype=np.float64), gamma)
    grad = Xb.T @ (w * gz) / np.sum(w)
    grad[:-1] += weight_decay * weights[:-1]
    return grad


@dataclass(frozen=True)
class TrainHyper:
    gamma: float = 1.0
    lr: float = 2.0
    weight_decay: float = 1e-4
    epochs: int = 300
    batch_size: Optional[int] = None
    seed: int = 0


def train_head(
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: Optional[np.ndarray] = None,
    hyper: TrainHyper = TrainHyper(),
    init: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Fit one logistic head by deterministic gradient descent.

    Full-batch by default; with a batch_size the per-epoch order is a seeded
    permutation, so results stay reproducible. Raises SingleClassError when
    the labels are constant.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    n = X.shape[0]
    if n == 0 or np.all(y == y[0]):
        raise SingleClassError("training set must contain both classes")
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if np.any(w < 0) or np.sum(w) <= 0:
        raise ValueError("sample weights must be non-negative with positive total")
    Xb = _design(X)
    theta = np.zeros(Xb.shape[1]) if init is None else np.asarray(init, dtype=np.float64).copy()

    if hyper.batch_size is None or hyper.batch_size >= n:
        for _ in range(hyper.epochs):
            p = np.clip(sigmoid(Xb @ theta), SCORE_EPS, 1.0 - SCORE_EPS)
            gz = _focal_grad_z(p, y, hyper.gamma)
            grad = Xb.T @ (w * gz) / np.sum(w)
            grad[:-1] += hyper.weight_decay * theta[:-1]
            theta -= hyper.lr * grad
    else:
        rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 0x7EA1]))
        for _ in range(hyper.epochs):
            order = rng.permutation(n)
            for start in range(0, n, hyper.batch_size):
                idx = order[start : start + hyper.batch_size]
                p = np.clip(sigmoid(Xb[idx] @ theta), SCORE_EPS, 1.0 - SCORE_EPS)
                gz = _focal_grad_z(p, y[idx], hyper.gamma)
                grad = Xb[idx].T @ (w[idx] * gz) / np.sum(w[idx])
                grad[:-1] += hyper.weight_decay * theta[:-1]
                theta -= hyper.lr * grad
    if not np.all(np.isfinite(theta)):
        raise FloatingPointError("training diverged to non-finite weights")
    return theta


@dataclass
class TrainingSet:
    """Feature/label/weight arrays for both heads, plus bookkeeping counts."""

    node_x: np.ndarray
    node_y: np.ndarray
    node_w: np.ndarray
    edge_x: np.ndarray
    edge_y: np.ndarray
    edge_w: np.ndarray

    @classmethod
    def empty(cls) -> "TrainingSet":
        return cls(
            np.zeros((0, NODE_DIM)), np.zeros(0), np.zeros(0),
            np.zeros((0, EDGE_DIM)), np.zeros(0), np.zeros(0),
        )

    @classmethod
    def concat(cls, parts: Iterable["TrainingSet"]) -> "TrainingSet":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(
            np.vstack([p.node_x for p in parts]),
            np.concatenate([p.node_y for p in parts]),
            np.concatenate([p.node_w for p in parts]),
            np.vstack([p.edge_x for p in parts]),
            np.concatenate([p.edge_y for p in parts]),
            np.concatenate([p.edge_w for p in parts]),
        )

    def summary(self) -> dict:
        return {
            "node_samples": int(self.node_y.size),
            "node_positives": int(np.sum(self.node_y > 0.5)),
            "edge_samples": int(self.edge_y.size),
            "edge_positives": int(np.sum(self.edge_y > 0.5)),
        }


def train_scorer(
    train_set: TrainingSet,
    hyper: TrainHyper = TrainHyper(),
    provenance: str = "pretrain",
    init: Optional[ScorerParams] = None,
    node_fallback: bool = False,
) -> ScorerParams:
    """Train both heads. A single-class node set raises unless node_fallback,
    which substitutes a constant-accept head (a no-FP world teaches nothing
    about invalid boxes; accepting everything is then the right answer)."""
    try:
        node_w = train_head(
            train_set.node_x,
            train_set.node_y,
            train_set.node_w,
            hyper,
            init=None if init is None else init.node_weights,
        )
    except SingleClassError:
        if not node_fallback:
            raise
        if init is not None and init.provenance != "untrained":
            node_w = init.node_weights.copy()
        else:
            node_w = np.zeros(NODE_DIM + 1)
            node_w[-1] = CONSTANT_ACCEPT_BIAS
    edge_w = train_head(
        train_set.edge_x,
        train_set.edge_y,
        train_set.edge_w,
        hyper,
        init=None if init is None else init.edge_weights,
    )
    return ScorerParams(node_w, edge_w, provenance=provenance)


def params_to_text(params: ScorerParams) -> str:
    lines = [
        PARAMS_FORMAT,
        f"schema {params.schema}",
        f"provenance {params.provenance}",
        f"node {params.node_weights.size}",
    ]
    lines += [repr(float(v)) for v in params.node_weights]
    lines.append(f"edge {params.edge_weights.size}")
    lines += [repr(float(v)) for v in params.edge_weights]
    return "\n".join(lines) + "\n"


def params_from_text(text: str) -> ScorerParams:
    lines = [ln.strip() for ln in text.strip().splitlines()]
    if not lines or lines[0] != PARAMS_FORMAT:
        raise ValueError(f"unrecognized scorer params header: {lines[:1]}")
    schema = lines[1].split(" ", 1)[1]
    if schema != FEATURE_SCHEMA_HASH:
        raise SchemaMismatchError(
            f"params schema {schema} does not match current feature schema {FEATURE_SCHEMA_HASH}"
        )
    provenance = lines[2].split(" ", 1)[1]
    n_node = int(lines[3].split(" ", 1)[1])
    node = np.array([float(v) for v in lines[4 : 4 + n_node]])
    edge_hdr = 4 + n_node
    n_edge = int(lines[edge_hdr].split(" ", 1)[1])
    edge = np.array([float(v) for v in lines[edge_hdr + 1 : edge_hdr + 1 + n_edge]])
    return ScorerParams(node, edge, provenance=provenance, schema=schema)


def save_params(params: ScorerParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(params_to_text(params))
    return path


def load_params(path) -> ScorerParams:
    return params_from_text(Path(path).read_text())


def match_detections_to_labels(
    detections: Seq[Detection], labels: LabelSet, tau: float = 0.5
) -> dict[int, int]:
    """Greedy per-frame best-IoU matching: det_id -> track_id for pairs with
    IoU >= tau, one-to-one per frame, ties broken by lower det_id."""
    label_by_frame = labels.by_frame()
    det_by_frame: dict[int, list[Detection]] = {}
    for d in detections:
        det_by_frame.setdefault(d.frame, []).append(d)
    assigned: dict[int, int] = {}
    for frame in sorted(det_by_frame):
        entries = label_by_frame.get(frame, [])
        if not entries:
            continue
        pairs = []
        for d in det_by_frame[frame]:
            for e in entries:
                v = iou(d.box, e.box)
                if v >= tau:
                    pairs.append((-v, d.det_id, e.track_id))
        pairs.sort()
        used_d, used_t = set(), set()
        for neg_iou, det_id, track_id in pairs:
            if det_id in used_d or track_id in used_t:
                continue
            used_d.add(det_id)
            used_t.add(track_id)
            assigned[det_id] = track_id
    return assigned


def make_training_set(
    seq: Sequence,
    labels: LabelSet,
    hier_cfg=None,
    tau: float = 0.5,
    min_conf: float = 0.1,
    weight_params: Optional[ScorerParams] = None,
) -> TrainingSet:
    """Build node and edge samples from a labeled sequence.

    Node label = 1 iff the detection IoU-matches a label box; edge candidates
    follow the solver's own level-by-level proposal rule with clusters grown
    by the labels (so every level's feature distribution is represented). With
    weight_params, each sample is weighted by the probability that scorer
    assigned to the sample's own label (pseudo-label confidence weighting);
    otherwise weights are 1.
    """
    from . import hier_solver  # deferred: solver imports this module

    cfg = hier_cfg if hier_cfg is not None else hier_solver.HierarchyConfig()
    admitted = hier_solver.admitted_detections(seq, min_conf)
    det_track = match_detections_to_labels(admitted, labels, tau)
    bounds = FrameBounds(seq.image_width, seq.image_height)

    node_rows, node_y = [], []
    edge_rows, edge_y = [], []
    for clip in hier_solver.split_clips(admitted, seq.frame_count, cfg):
        clip_bounds = ClipBounds(clip.first_frame, clip.frame_count)
        feats = node_features(clip.detections, bounds, clip_bounds)
        for i, d in enumerate(clip.detections):
            node_rows.append(feats[i])
            node_y.append(1.0 if d.det_id in det_track else 0.0)

        clusters = hier_solver.make_singletons(clip.detections)
        track_of = {c.cluster_id: det_track.get(c.cluster_id) for c in clusters}
        next_id = hier_solver.CLUSTER_ID_BASE
        for span in cfg.edge_spans:
            new_clusters = []
            for left, right in hier_solver.window_groups(clusters, span, clip.first_frame):
                for u, v in hier_solver.propose_pairs(left, right, cfg.knn):
                    edge_rows.append(hier_solver.cluster_edge_features(u, v, span))
                    same = track_of[u.cluster_id] is not None and (
                        track_of[u.cluster_id] == track_of[v.cluster_id]
                    )
                    edge_y.append(1.0 if same else 0.0)
                # teacher forcing: merge same-track pairs across the halves
                right_by_track = {
                    track_of[c.cluster_id]: c for c in right if track_of[c.cluster_id] is not None
                }
                merged_right = set()
                for u in left:
                    t = track_of[u.cluster_id]
                    v = right_by_track.get(t)
                    if t is None or v is None:
                        new_clusters.append(u)
                        continue
                    m = hier_solver.merge_clusters(next_id, u, v)
                    track_of[m.cluster_id] = t
                    next_id += 1
                    merged_right.add(v.cluster_id)
                    new_clusters.append(m)
                new_clusters.extend(c for c in right if c.cluster_id not in merged_right)
            clusters = new_clusters

    ts = TrainingSet(
        node_x=np.asarray(node_rows).reshape(-1, NODE_DIM),
        node_y=np.asarray(node_y),
        node_w=np.ones(len(node_y)),
        edge_x=np.asarray(edge_rows).reshape(-1, EDGE_DIM),
        edge_y=np.asarray(edge_y),
        edge_w=np.ones(len(edge_y)),
    )
    if weight_params is not None:
        if ts.node_y.size:
            p = score_nodes(ts.node_x, weight_params)
            ts.node_w = np.where(ts.node_y > 0.5, p, 1.0 - p)
        if ts.edge_y.size:
            p = score_edges(ts.edge_x, weight_params)
            ts.edge_w = np.where(ts.edge_y > 0.5, p, 1.0 - p)
    return ts


def self_train(
    sequences: Seq[Sequence],
    pretrained: ScorerParams,
    hier_cfg=None,
    hyper: TrainHyper = TrainHyper(epochs=120),
    min_conf: float = 0.1,
    rounds: int = 1,
) -> ScorerParams:
    """Pseudo-label the sequences with the current params, then continue
    training from them on the confidence-weighted pseudo labels."""
    from . import hier_solver

    cfg = hier_cfg if hier_cfg is not None else hier_solver.HierarchyConfig()
    params = pretrained
    for _ in range(max(rounds, 1)):
        parts = []
        total_tracks = 0
        for seq in sequences:
            pseudo, diag = hier_solver.pseudo_label(seq, params, cfg, min_conf=min_conf)
            total_tracks += diag.n_tracks
            if diag.n_tracks:
                parts.append(
                    make_training_set(seq, pseudo, cfg, min_conf=min_conf, weight_params=params)
                )
        if total_tracks == 0:
            raise SelfTrainError("solver produced zero tracks; nothing to self-train on")
        ts = TrainingSet.concat(parts)
        try:
            params = train_scorer(
                ts, hyper, provenance="pseudo-label-finetune", init=params, node_fallback=True
            )
        except SingleClassError as err:
            raise SelfTrainError(f"degenerate pseudo-label training set: {err}") from err
    return params
