"""Hierarchical track graph: validation, level-by-level association, labels.

A clip of frames is processed bottom-up. Level 0 scores every detection for
validity; accepted detections become singleton clusters. Each edge level then
partitions the clip into windows of the level's span and runs one exact
bipartite matching between the clusters of the two half-windows, merging the
matched pairs. Adjacent clips are joined by one more matching over their
clusters. Human constraints (clamps) override scores everywhere: forced-on
edges are always kept, forced-off edges never selected, forced-valid and
forced-invalid detections bypass the validity threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence as Seq

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Box, Detection, LabelEntry, LabelSet, Sequence
from .features import ClipBounds, FrameBounds, edge_feature_vector, node_features, tail_velocity
from .scorer import ScorerParams, score_edges, score_nodes

CLUSTER_ID_BASE = 10_000_000


class ConstraintConflictError(ValueError):
    """Two human constraints (or a response and prior constraints) disagree."""


@dataclass(frozen=True)
class HierarchyConfig:
    """Shape of the hierarchy: clip length, validity window, level spans."""

    clip_length: int = 512
    node_window: int = 10
    edge_spans: tuple[int, ...] = (2, 4, 8, 16, 32, 64, 128, 256, 512)
    knn: int = 10
    node_threshold: float = 0.5
    gap_fill: int = 8

    def __post_init__(self):
        if self.clip_length < 2:
            raise ValueError("clip_length must be >= 2")
        if self.node_window < 2 or self.node_window % 2 != 0:
            raise ValueError("node_window must be an even integer >= 2")
        spans = tuple(int(s) for s in self.edge_spans)
        if not spans or spans[0] != 2:
            raise ValueError("edge_spans must start at 2")
        for a, b in zip(spans, spans[1:]):
            if b != 2 * a:
                raise ValueError("edge_spans must double at every level")
        if spans[-1] != self.clip_length:
            raise ValueError("the last span must equal clip_length")
        if self.knn < 1:
            raise ValueError("knn must be >= 1")
        if not 0.0 < self.node_threshold < 1.0:
            raise ValueError("node_threshold must lie in (0, 1)")
        if self.gap_fill < 0:
            raise ValueError("gap_fill must be >= 0")
        object.__setattr__(self, "edge_spans", spans)

    @property
    def n_levels(self) -> int:
        """Node level plus one level per span."""
        return 1 + len(self.edge_spans)

    def to_dict(self) -> dict:
        return {
            "clip_length": self.clip_length,
            "node_window": self.node_window,
            "edge_spans": list(self.edge_spans),
            "knn": self.knn,
            "node_threshold": self.node_threshold,
            "gap_fill": self.gap_fill,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HierarchyConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown hierarchy config keys: {sorted(unknown)}")
        data = dict(data)
        if "edge_spans" in data:
            data["edge_spans"] = tuple(data["edge_spans"])
        return cls(**data)


# ---------------------------------------------------------------------------
# Clamps


@dataclass(frozen=True)
class Clamp:
    """One human constraint with the response that created it."""

    kind: str  # "node" or "edge"
    key: tuple
    value: bool
    response_id: str

    def describe(self) -> str:
        if self.kind == "node":
            state = "forced-valid" if self.value else "forced-invalid"
            return f"detection {self.key[0]} {state} (response {self.response_id})"
        level, a, b = self.key
        state = "forced-on" if self.value else "forced-off"
        return f"level {level} edge ({a}, {b}) {state} (response {self.response_id})"


class ClampSet:
    """Node clamps are global per detection; edge clamps are scoped to the
    level whose graph the edge belongs to. Contradictory writes raise."""

    def __init__(self):
        self._node: dict[int, Clamp] = {}
        self._edge: dict[tuple[int, int, int], Clamp] = {}

    def set_node(self, det_id: int, valid: bool, response_id: str) -> None:
        prior = self._node.get(det_id)
        if prior is not None and prior.value != valid:
            raise ConstraintConflictError(
                f"cannot force detection {det_id} {'valid' if valid else 'invalid'} "
                f"(response {response_id}): conflicts with {prior.describe()}"
            )
        if prior is None:
            self._node[det_id] = Clamp("node", (det_id,), valid, response_id)

    def node_state(self, det_id: int) -> Optional[bool]:
        clamp = self._node.get(det_id)
        return None if clamp is None else clamp.value

    @staticmethod
    def _edge_key(level: int, a: int, b: int) -> tuple[int, int, int]:
        return (level, a, b) if a <= b else (level, b, a)

    def set_edge(self, level: int, a: int, b: int, on: bool, response_id: str) -> None:
        key = self._edge_key(level, a, b)
        prior = self._edge.get(key)
        if prior is not None and prior.value != on:
            raise ConstraintConflictError(
                f"cannot force edge ({a}, {b}) at level {level} "
                f"{'on' if on else 'off'} (response {response_id}): "
                f"conflicts with {prior.describe()}"
            )
        if prior is None:
            self._edge[key] = Clamp("edge", key, on, response_id)

    def edge_state(self, level: int, a: int, b: int) -> Optional[bool]:
        clamp = self._edge.get(self._edge_key(level, a, b))
        return None if clamp is None else clamp.value

    def edge_clamp(self, level: int, a: int, b: int) -> Optional[Clamp]:
        return self._edge.get(self._edge_key(level, a, b))

    def forced_on_partner(self, level: int, cluster_id: int) -> Optional[int]:
        """The cluster this one is forced to merge with at this level, if any."""
        for (lvl, a, b), clamp in self._edge.items():
            if lvl == level and clamp.value and cluster_id in (a, b):
                return b if cluster_id == a else a
        return None

    @property
    def n_node(self) -> int:
        return len(self._node)

    @property
    def n_edge(self) -> int:
        return len(self._edge)

    def node_items(self) -> list[tuple[int, Clamp]]:
        return sorted(self._node.items())

    def edge_items(self) -> list[tuple[tuple[int, int, int], Clamp]]:
        return sorted(self._edge.items())

    def to_dict(self) -> dict:
        return {
            "node": [
                {"det_id": k, "valid": c.value, "response_id": c.response_id}
                for k, c in self.node_items()
            ],
            "edge": [
                {"level": k[0], "a": k[1], "b": k[2], "on": c.value, "response_id": c.response_id}
                for k, c in self.edge_items()
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClampSet":
        out = cls()
        for row in data.get("node", []):
            out.set_node(row["det_id"], row["valid"], row["response_id"])
        for row in data.get("edge", []):
            out.set_edge(row["level"], row["a"], row["b"], row["on"], row["response_id"])
        return out


# ---------------------------------------------------------------------------
# Clusters


@dataclass(frozen=True)
class Cluster:
    """A cluster of detections believed to be one identity, with cached
    representatives used for candidate proposal and edge features."""

    cluster_id: int
    members: tuple[Detection, ...]
    mean_embedding: Optional[np.ndarray]
    mean_conf: float
    velocity_tail: Optional[np.ndarray]

    @property
    def first_frame(self) -> int:
        return self.members[0].frame

    @property
    def last_frame(self) -> int:
        return self.members[-1].frame

    @property
    def first_box(self) -> Box:
        return self.members[0].box

    @property
    def last_box(self) -> Box:
        return self.members[-1].box

    @property
    def first_det_id(self) -> int:
        return min(d.det_id for d in self.members)

    def sort_key(self) -> tuple[int, int]:
        return (self.first_frame, self.cluster_id)


def make_cluster(cluster_id: int, members: Iterable[Detection]) -> Cluster:
    members = tuple(sorted(members, key=lambda d: d.frame))
    if not members:
        raise ValueError("a cluster needs at least one member")
    frames = [d.frame for d in members]
    if len(set(frames)) != len(frames):
        raise ValueError(f"cluster {cluster_id} has two detections in one frame")
    embs = [d.embedding for d in members if d.embedding is not None]
    mean_emb = None
    if embs:
        m = np.mean(np.stack(embs), axis=0)
        norm = float(np.linalg.norm(m))
        mean_emb = m / norm if norm > 0 else None
    vel = tail_velocity(frames, [d.box for d in members])
    conf = float(np.mean([d.confidence for d in members]))
    return Cluster(cluster_id, members, mean_emb, conf, vel)


def make_singletons(detections: Seq[Detection]) -> list[Cluster]:
    """Singleton clusters keyed by det_id, in (frame, det_id) order."""
    out = [make_cluster(d.det_id, [d]) for d in detections]
    out.sort(key=Cluster.sort_key)
    return out


def merge_clusters(cluster_id: int, u: Cluster, v: Cluster) -> Cluster:
    return make_cluster(cluster_id, u.members + v.members)


def cluster_edge_features(u: Cluster, v: Cluster, span: int) -> np.ndarray:
    """Edge features from the earlier cluster's tail to the later one's head."""
    if u.first_frame > v.first_frame:
        u, v = v, u
    gap = v.first_frame - u.last_frame
    return edge_feature_vector(
        gap,
        span,
        u.last_box,
        v.first_box,
        u.mean_embedding,
        v.mean_embedding,
        u.mean_conf,
        v.mean_conf,
        u.velocity_tail,
    )


def _similarity(u: Cluster, v: Cluster) -> float:
    if u.mean_embedding is None or v.mean_embedding is None:
        return -2.0
    return float(np.dot(u.mean_embedding, v.mean_embedding))


def propose_pairs(left: Seq[Cluster], right: Seq[Cluster], knn: int) -> list[tuple[Cluster, Cluster]]:
    """Union of each side's k nearest neighbours on the other side, ranked by
    embedding similarity, ties by smaller time gap then lower cluster id.
    Pairs that would overlap in time are never proposed."""
    if not left or not right:
        return []
    pairs: set[tuple[int, int]] = set()
    by_id = {}
    for u in left:
        cands = []
        for v in right:
            if v.first_frame <= u.last_frame:
                continue
            cands.append((-_similarity(u, v), v.first_frame - u.last_frame, v.cluster_id))
            by_id[(u.cluster_id, v.cluster_id)] = (u, v)
        cands.sort()
        for _, _, vid in cands[:knn]:
            pairs.add((u.cluster_id, vid))
    for v in right:
        cands = []
        for u in left:
            if v.first_frame <= u.last_frame:
                continue
            cands.append((-_similarity(u, v), v.first_frame - u.last_frame, u.cluster_id))
        cands.sort()
        for _, _, uid in cands[:knn]:
            pairs.add((uid, v.cluster_id))
    return [by_id[p] for p in sorted(pairs)]


def window_groups(
    clusters: Seq[Cluster], span: int, clip_first: int
) -> list[tuple[list[Cluster], list[Cluster]]]:
    """Partition clusters into span-sized windows and split each window into
    its two halves by cluster start frame. The hierarchy keeps every cluster
    inside one half: a level-s cluster never crosses a span-s boundary."""
    half = span // 2
    groups: dict[int, tuple[list[Cluster], list[Cluster]]] = {}
    for c in sorted(clusters, key=Cluster.sort_key):
        offset = c.first_frame - clip_first
        w = offset // span
        side = (offset // half) % 2
        groups.setdefault(w, ([], []))[side].append(c)
    return [groups[w] for w in sorted(groups)]


# ---------------------------------------------------------------------------
# Level graphs


@dataclass(frozen=True)
class LevelEdge:
    u: int
    v: int
    features: np.ndarray
    score: float

    @property
    def log_odds(self) -> float:
        return math.log(self.score / (1.0 - self.score))


@dataclass
class LevelGraph:
    """One edge level of one clip: candidate edges over the incoming clusters."""

    clip_index: int
    level: int
    span: int
    clusters: dict[int, Cluster]
    edges: list[LevelEdge]
    groups: list[tuple[list[int], list[int]]]

    def edge_map(self) -> dict[tuple[int, int], LevelEdge]:
        return {(e.u, e.v): e for e in self.edges}

    def to_dict(self) -> dict:
        return {
            "clip_index": self.clip_index,
            "level": self.level,
            "span": self.span,
            "clusters": [
                {
                    "cluster_id": c.cluster_id,
                    "det_ids": [d.det_id for d in c.members],
                    "first_frame": c.first_frame,
                    "last_frame": c.last_frame,
                }
                for c in sorted(self.clusters.values(), key=Cluster.sort_key)
            ],
            "edges": [
                {"u": e.u, "v": e.v, "score": e.score, "features": [float(x) for x in e.features]}
                for e in self.edges
            ],
            "groups": [[list(l), list(r)] for l, r in self.groups],
        }


def cluster_rejected(c: Cluster, clamps: ClampSet) -> bool:
    """A cluster with any forced-invalid member is withdrawn from association
    (human rejections always win)."""
    return any(clamps.node_state(d.det_id) is False for d in c.members)


def build_level_graph(
    clusters: Seq[Cluster],
    clip_index: int,
    level: int,
    span: int,
    clip_first: int,
    params: ScorerParams,
    cfg: HierarchyConfig,
    clamps: ClampSet,
) -> LevelGraph:
    alive = [c for c in clusters if not cluster_rejected(c, clamps)]
    groups_cl = window_groups(alive, span, clip_first)
    edges: list[LevelEdge] = []
    groups: list[tuple[list[int], list[int]]] = []
    for left, right in groups_cl:
        pairs = propose_pairs(left, right, cfg.knn)
        if pairs:
            feats = np.stack([cluster_edge_features(u, v, span) for u, v in pairs])
            scores = score_edges(feats, params)
            for (u, v), f, s in zip(pairs, feats, scores):
                edges.append(LevelEdge(u.cluster_id, v.cluster_id, f, float(s)))
        groups.append(
            ([c.cluster_id for c in left], [c.cluster_id for c in right])
        )
    edges.sort(key=lambda e: (e.u, e.v))
    return LevelGraph(
        clip_index, level, span, {c.cluster_id: c for c in alive}, edges, groups
    )


@dataclass
class LevelSolveResult:
    selected: list[LevelEdge]
    clusters: list[Cluster]
    objective: float
    next_cluster_id: int


def _match_group(
    left_ids: list[int],
    right_ids: list[int],
    edge_map: dict[tuple[int, int], LevelEdge],
    level: int,
    clamps: ClampSet,
) -> list[tuple[int, int]]:
    """Exact maximum-total-log-odds matching within one window.

    Forced-on edges are selected first and their endpoints leave the pool; a
    shared endpoint between two forced-on edges is a constraint conflict.
    Remaining edges are eligible iff unclamped with score above one half.
    """
    chosen: list[tuple[int, int]] = []
    used_l: dict[int, Clamp] = {}
    used_r: dict[int, Clamp] = {}
    for (u, v) in sorted(edge_map):
        if u not in left_ids or v not in right_ids:
            continue
        clamp = clamps.edge_clamp(level, u, v)
        if clamp is None or not clamp.value:
            continue
        if u in used_l:
            raise ConstraintConflictError(
                f"{clamp.describe()} conflicts with {used_l[u].describe()}"
            )
        if v in used_r:
            raise ConstraintConflictError(
                f"{clamp.describe()} conflicts with {used_r[v].describe()}"
            )
        used_l[u], used_r[v] = clamp, clamp
        chosen.append((u, v))

    free_l = [i for i in left_ids if i not in used_l]
    free_r = [j for j in right_ids if j not in used_r]
    if free_l and free_r:
        W = np.zeros((len(free_l), len(free_r)))
        for ii, u in enumerate(free_l):
            for jj, v in enumerate(free_r):
                e = edge_map.get((u, v))
                if e is None:
                    continue
                if clamps.edge_state(level, u, v) is not None:
                    continue  # forced-off (forced-on handled above)
                if e.score > 0.5:
                    W[ii, jj] = e.log_odds
        rows, cols = linear_sum_assignment(W, maximize=True)
        for ii, jj in zip(rows, cols):
            if W[ii, jj] > 0.0:
                chosen.append((free_l[ii], free_r[jj]))
    return chosen


def solve_level(graph: LevelGraph, clamps: ClampSet, next_cluster_id: int) -> LevelSolveResult:
    """Solve every window of the level; merge matched pairs, pass the rest
    through unchanged. Objective is the total log odds of selected edges.

    Clusters carrying a forced-invalid detection are dropped here as well as
    at build time, so rejections arriving after the graph was built still
    keep the cluster out of every merge and out of the output.
    """
    edge_map = graph.edge_map()
    alive = {
        cid for cid, c in graph.clusters.items() if not cluster_rejected(c, clamps)
    }
    selected: list[LevelEdge] = []
    merged: dict[int, int] = {}  # member cluster id -> position in out list
    out: list[Cluster] = []
    objective = 0.0
    for group_left, group_right in graph.groups:
        left_ids = [i for i in group_left if i in alive]
        right_ids = [j for j in group_right if j in alive]
        pairs = _match_group(left_ids, right_ids, edge_map, graph.level, clamps)
        pairs.sort(key=lambda p: graph.clusters[p[0]].sort_key())
        for u, v in pairs:
            edge = edge_map.get((u, v))
            if edge is None:
                # forced-on pair that the proposal step never generated
                feats = cluster_edge_features(graph.clusters[u], graph.clusters[v], graph.span)
                edge = LevelEdge(u, v, feats, 0.5)
                objective += 0.0
            else:
                objective += edge.log_odds
            selected.append(edge)
            merged[u] = merged[v] = len(out)
            out.append(merge_clusters(next_cluster_id, graph.clusters[u], graph.clusters[v]))
            next_cluster_id += 1
    for cid in sorted(alive):
        if cid not in merged:
            out.append(graph.clusters[cid])
    out.sort(key=Cluster.sort_key)
    return LevelSolveResult(selected, out, objective, next_cluster_id)


# ---------------------------------------------------------------------------
# Clips


@dataclass
class Clip:
    index: int
    first_frame: int
    last_frame: int
    detections: list[Detection]

    @property
    def frame_count(self) -> int:
        return self.last_frame - self.first_frame + 1


def admitted_detections(seq: Sequence, min_conf: float) -> list[Detection]:
    """Detections above the admission confidence, in (frame, det_id) order."""
    out = [d for d in seq.detections if d.confidence >= min_conf]
    out.sort(key=lambda d: (d.frame, d.det_id))
    return out


def split_clips(detections: Seq[Detection], frame_count: int, cfg: HierarchyConfig) -> list[Clip]:
    """Fixed clip windows over [1, frame_count]; clips may hold no detections."""
    n_clips = max(1, math.ceil(frame_count / cfg.clip_length))
    clips = []
    by_clip: dict[int, list[Detection]] = {i: [] for i in range(n_clips)}
    for d in detections:
        by_clip[(d.frame - 1) // cfg.clip_length].append(d)
    for i in range(n_clips):
        first = 1 + i * cfg.clip_length
        last = min((i + 1) * cfg.clip_length, frame_count)
        dets = sorted(by_clip[i], key=lambda d: (d.frame, d.det_id))
        clips.append(Clip(i, first, last, dets))
    return clips


@dataclass
class NodeLevel:
    """Level 0 of one clip: per-detection validity scores and decisions."""

    clip_index: int
    detections: list[Detection]
    features: np.ndarray
    scores: dict[int, float]
    accepted: list[int]

    def to_dict(self) -> dict:
        return {
            "clip_index": self.clip_index,
            "scores": {str(k): v for k, v in sorted(self.scores.items())},
            "accepted": list(self.accepted),
        }


def validate_nodes(
    clip: Clip,
    params: ScorerParams,
    cfg: HierarchyConfig,
    clamps: ClampSet,
    bounds: FrameBounds,
) -> NodeLevel:
    """Accept a detection iff forced-valid, or unclamped with validity score
    at or above the node threshold."""
    if clip.detections:
        feats = node_features(clip.detections, bounds, ClipBounds(clip.first_frame, clip.frame_count))
        scores = score_nodes(feats, params)
    else:
        feats = np.zeros((0, 0))
        scores = np.zeros(0)
    score_map = {d.det_id: float(s) for d, s in zip(clip.detections, scores)}
    accepted = []
    for d in clip.detections:
        state = clamps.node_state(d.det_id)
        if state is True:
            accepted.append(d.det_id)
        elif state is None and score_map[d.det_id] >= cfg.node_threshold:
            accepted.append(d.det_id)
    return NodeLevel(clip.index, list(clip.detections), feats, score_map, accepted)


@dataclass
class ClipResult:
    clip: Clip
    node_level: NodeLevel
    level_graphs: list[LevelGraph]
    level_results: list[LevelSolveResult]
    clusters: list[Cluster]

    def objective(self) -> float:
        return sum(r.objective for r in self.level_results)


def solve_clip(
    clip: Clip,
    params: ScorerParams,
    cfg: HierarchyConfig,
    clamps: ClampSet,
    bounds: FrameBounds,
    next_cluster_id: int,
) -> tuple[ClipResult, int]:
    node_level = validate_nodes(clip, params, cfg, clamps, bounds)
    by_id = {d.det_id: d for d in clip.detections}
    clusters = make_singletons([by_id[i] for i in node_level.accepted])
    graphs: list[LevelGraph] = []
    results: list[LevelSolveResult] = []
    for li, span in enumerate(cfg.edge_spans, start=1):
        graph = build_level_graph(
            clusters, clip.index, li, span, clip.first_frame, params, cfg, clamps
        )
        graphs.append(graph)
        res = solve_level(graph, clamps, next_cluster_id)
        results.append(res)
        clusters = res.clusters
        next_cluster_id = res.next_cluster_id
    clusters = [c for c in clusters if not cluster_rejected(c, clamps)]
    return ClipResult(clip, node_level, graphs, results, clusters), next_cluster_id


# ---------------------------------------------------------------------------
# Whole-sequence solve


@dataclass
class Trajectory2:
    """A cross-clip chain of clusters (working record during linking)."""

    cluster: Cluster
    last_clip: int


@dataclass
class SolveState:
    """Everything the solver decided for one sequence, re-derivable from the
    inputs plus clamps. Level graphs are kept for querying and re-solving."""

    seq_id: str
    cfg: HierarchyConfig
    clips: list[ClipResult]
    tracks: list[tuple[int, Cluster]]  # (track_id, final cluster)
    boundary_edges: list[LevelEdge]

    def objective(self) -> float:
        return sum(c.objective() for c in self.clips) + sum(
            e.log_odds for e in self.boundary_edges
        )

    def n_tracks(self) -> int:
        return len(self.tracks)

    def to_dict(self) -> dict:
        return {
            "config": self.cfg.to_dict(),
            "objective": self.objective(),
            "clips": [
                {
                    "node": c.node_level.to_dict(),
                    "levels": [g.to_dict() for g in c.level_graphs],
                }
                for c in self.clips
            ],
            "tracks": [
                {
                    "track_id": tid,
                    "det_ids": [d.det_id for d in cl.members],
                }
                for tid, cl in self.tracks
            ],
        }


def link_clips(
    clip_results: list[ClipResult],
    params: ScorerParams,
    cfg: HierarchyConfig,
    clamps: ClampSet,
    next_cluster_id: int,
) -> tuple[list[Cluster], list[LevelEdge], int]:
    """Join adjacent clips with one bipartite matching per boundary. A chain
    only continues through consecutive clips; clusters separated by an empty
    clip stay unlinked."""
    level = len(cfg.edge_spans) + 1  # boundary matchings live one level up
    trajectories: list[Trajectory2] = [
        Trajectory2(c, 0) for c in (clip_results[0].clusters if clip_results else [])
    ]
    boundary: list[LevelEdge] = []
    for nxt in clip_results[1:]:
        left = [t for t in trajectories if t.last_clip == nxt.clip.index - 1]
        left = [t for t in left if not cluster_rejected(t.cluster, clamps)]
        right = [c for c in nxt.clusters if not cluster_rejected(c, clamps)]
        left_cl = sorted((t.cluster for t in left), key=Cluster.sort_key)
        pairs = propose_pairs(left_cl, right, cfg.knn)
        edge_map: dict[tuple[int, int], LevelEdge] = {}
        if pairs:
            feats = np.stack([cluster_edge_features(u, v, cfg.clip_length) for u, v in pairs])
            scores = score_edges(feats, params)
            for (u, v), f, s in zip(pairs, feats, scores):
                edge_map[(u.cluster_id, v.cluster_id)] = LevelEdge(
                    u.cluster_id, v.cluster_id, f, float(s)
                )
        chosen = _match_group(
            [c.cluster_id for c in left_cl],
            [c.cluster_id for c in right],
            edge_map,
            level,
            clamps,
        )
        by_id = {c.cluster_id: c for c in left_cl}
        by_id.update({c.cluster_id: c for c in right})
        traj_of = {t.cluster.cluster_id: t for t in left}
        merged_right = set()
        chosen.sort(key=lambda p: by_id[p[0]].sort_key())
        for u, v in chosen:
            edge = edge_map.get((u, v))
            if edge is None:
                feats = cluster_edge_features(by_id[u], by_id[v], cfg.clip_length)
                edge = LevelEdge(u, v, feats, 0.5)
            boundary.append(edge)
            t = traj_of[u]
            t.cluster = merge_clusters(next_cluster_id, t.cluster, by_id[v])
            next_cluster_id += 1
            t.last_clip = nxt.clip.index
            merged_right.add(v)
        for c in right:
            if c.cluster_id not in merged_right:
                trajectories.append(Trajectory2(c, nxt.clip.index))
    final = [t.cluster for t in trajectories if not cluster_rejected(t.cluster, clamps)]
    final.sort(key=lambda c: (c.first_frame, c.first_det_id))
    return final, boundary, next_cluster_id


def solve_sequence(
    seq: Sequence,
    params: ScorerParams,
    cfg: HierarchyConfig,
    clamps: Optional[ClampSet] = None,
    min_conf: float = 0.1,
) -> SolveState:
    """Full solve: admission, per-clip hierarchy, boundary linking, track ids."""
    clamps = clamps if clamps is not None else ClampSet()
    bounds = FrameBounds(seq.image_width, seq.image_height)
    admitted = admitted_detections(seq, min_conf)
    clips = split_clips(admitted, seq.frame_count, cfg)
    next_id = CLUSTER_ID_BASE
    clip_results = []
    for clip in clips:
        cr, next_id = solve_clip(clip, params, cfg, clamps, bounds, next_id)
        clip_results.append(cr)
    final, boundary, next_id = link_clips(clip_results, params, cfg, clamps, next_id)
    tracks = [(tid, c) for tid, c in enumerate(final, start=1)]
    return SolveState(seq.seq_id, cfg, clip_results, tracks, boundary)


def _interpolate_box(a: Box, b: Box, t: float) -> Box:
    return Box(
        a.left + (b.left - a.left) * t,
        a.top + (b.top - a.top) * t,
        a.width + (b.width - a.width) * t,
        a.height + (b.height - a.height) * t,
    )


def extract_labels(
    state: SolveState,
    clamps: Optional[ClampSet] = None,
    refined: Optional[dict[int, Box]] = None,
) -> LabelSet:
    """Labels from the solved tracks. Human-refined boxes replace detector
    boxes verbatim with human provenance; gaps up to the configured length
    are filled by linear interpolation; every kept entry carries the node
    validity score of its detection as the label score."""
    clamps = clamps if clamps is not None else ClampSet()
    refined = refined or {}
    node_scores: dict[int, float] = {}
    for cr in state.clips:
        node_scores.update(cr.node_level.scores)

    entries: list[LabelEntry] = []
    for track_id, cluster in state.tracks:
        kept = [d for d in cluster.members if clamps.node_state(d.det_id) is not False]
        if not kept:
            continue
        prev: Optional[tuple[int, Box, float]] = None
        for d in kept:
            box = refined.get(d.det_id, d.box)
            prov = "human" if d.det_id in refined else "pseudo"
            score = node_scores.get(d.det_id, 0.5)
            if clamps.node_state(d.det_id) is True:
                score = 1.0
            if prev is not None:
                gap = d.frame - prev[0]
                if 1 < gap <= state.cfg.gap_fill + 1:
                    for f in range(prev[0] + 1, d.frame):
                        t = (f - prev[0]) / gap
                        entries.append(
                            LabelEntry(
                                f,
                                track_id,
                                _interpolate_box(prev[1], box, t),
                                provenance="interpolated",
                                score=min(prev[2], score),
                            )
                        )
            entries.append(LabelEntry(d.frame, track_id, box, provenance=prov, score=score))
            prev = (d.frame, box, score)
    return LabelSet(state.seq_id, tuple(entries))


@dataclass
class PseudoDiagnostics:
    n_admitted: int
    n_accepted: int
    n_tracks: int
    objective: float


def pseudo_label(
    seq: Sequence,
    params: ScorerParams,
    cfg: Optional[HierarchyConfig] = None,
    min_conf: float = 0.1,
    clamps: Optional[ClampSet] = None,
    refined: Optional[dict[int, Box]] = None,
) -> tuple[LabelSet, PseudoDiagnostics]:
    """Solve and extract in one call; the usual entry point for inference."""
    cfg = cfg if cfg is not None else HierarchyConfig()
    state = solve_sequence(seq, params, cfg, clamps=clamps, min_conf=min_conf)
    labels = extract_labels(state, clamps=clamps, refined=refined)
    diag = PseudoDiagnostics(
        n_admitted=sum(len(c.clip.detections) for c in state.clips),
        n_accepted=sum(len(c.node_level.accepted) for c in state.clips),
        n_tracks=state.n_tracks(),
        objective=state.objective(),
    )
    return labels, diag
