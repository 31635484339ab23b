"""Active labeling: uncertainty, budgets, query selection, the labeling run.

The run walks the hierarchy shallow to deep. At each level it issues one
budgeted batch of queries, serves them one at a time with the candidate list
refreshed against the live constraint state, applies the answers as clamps,
re-solves the level, and moves on. Every query, answer, and click lands in an
append-only audit log; replaying the log reproduces the run exactly.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence as Seq

import numpy as np

from .core import Box, Detection, LabelEntry, LabelSet, Sequence
from .features import FrameBounds
from .hier_solver import (
    CLUSTER_ID_BASE,
    ClampSet,
    Clip,
    Cluster,
    ConstraintConflictError,
    HierarchyConfig,
    LevelGraph,
    NodeLevel,
    admitted_detections,
    build_level_graph,
    cluster_rejected,
    extract_labels,
    link_clips,
    make_singletons,
    solve_level,
    split_clips,
    validate_nodes,
)
from .hier_solver import ClipResult, SolveState
from .scorer import ScorerParams

QUERY_COST = {"validate-node": 1, "refine-box": 2, "associate": 1}
ACQUISITIONS = ("spam", "random", "entropy-image", "entropy-box", "coreset")


class UnknownAcquisitionError(ValueError):
    """Acquisition strategy name is not one of the implemented set."""


class StaleResponseError(ValueError):
    """Response references a query or candidate that is no longer open."""


def entropy(p) -> float:
    """Binary entropy in nats; maximal ln 2 at one half."""
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability out of range: {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -(p * math.log(p) + (1.0 - p) * math.log(1.0 - p))


def node_uncertainty(graph: LevelGraph, cluster_id: int, clamps: ClampSet) -> float:
    """Highest entropy among the cluster's unclamped incident edges; clamped
    edges are resolved and no longer count. Isolated clusters score zero."""
    best = 0.0
    for e in graph.edges:
        if cluster_id not in (e.u, e.v):
            continue
        if clamps.edge_state(graph.level, e.u, e.v) is not None:
            continue
        best = max(best, entropy(e.score))
    return best


# ---------------------------------------------------------------------------
# Budget


@dataclass
class BudgetLedger:
    """Per-level click allocations plus the box-refinement reserve.

    Spending is tracked per level bucket and per query category; nothing may
    overdraw its bucket.
    """

    total: int
    allocations: list[int]  # index 0 = node level, then one per edge level
    reserve: int
    spent: list[int] = field(default_factory=list)
    reserve_spent: int = 0
    spent_by_category: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.spent:
            self.spent = [0] * len(self.allocations)
        self.check()

    def check(self) -> None:
        if self.total < 0 or self.reserve < 0:
            raise ValueError("budget values must be nonnegative")
        if any(a < 0 for a in self.allocations) or any(s < 0 for s in self.spent):
            raise ValueError("allocations and spend must be nonnegative")
        if sum(self.allocations) + self.reserve != self.total:
            raise ValueError("allocations plus reserve must equal the total budget")
        if len(self.spent) != len(self.allocations):
            raise ValueError("one spend counter per allocation")
        for a, s in zip(self.allocations, self.spent):
            if s > a:
                raise ValueError("spend exceeds allocation")
        if self.reserve_spent > self.reserve:
            raise ValueError("reserve overdrawn")

    def remaining(self, level: int) -> int:
        return self.allocations[level] - self.spent[level]

    def reserve_remaining(self) -> int:
        return self.reserve - self.reserve_spent

    def debit(self, level: int, cost: int, category: str) -> None:
        if cost > self.remaining(level):
            raise ValueError(f"level {level} bucket cannot afford {cost} clicks")
        self.spent[level] += cost
        self.spent_by_category[category] = self.spent_by_category.get(category, 0) + cost

    def debit_reserve(self, cost: int, category: str) -> None:
        if cost > self.reserve_remaining():
            raise ValueError(f"reserve cannot afford {cost} clicks")
        self.reserve_spent += cost
        self.spent_by_category[category] = self.spent_by_category.get(category, 0) + cost

    @property
    def spent_total(self) -> int:
        return sum(self.spent) + self.reserve_spent

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "allocations": list(self.allocations),
            "reserve": self.reserve,
            "spent": list(self.spent),
            "reserve_spent": self.reserve_spent,
            "spent_by_category": dict(sorted(self.spent_by_category.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BudgetLedger":
        return cls(
            total=data["total"],
            allocations=list(data["allocations"]),
            reserve=data["reserve"],
            spent=list(data["spent"]),
            reserve_spent=data["reserve_spent"],
            spent_by_category=dict(data["spent_by_category"]),
        )


def _largest_remainder(total: int, weights: Seq[float]) -> list[int]:
    """Integer split of `total` proportional to weights; leftover units go to
    the largest fractional remainders, ties resolved toward later entries
    (the deeper group/level)."""
    if total == 0 or not weights:
        return [0] * len(weights)
    wsum = sum(weights)
    exact = [total * w / wsum for w in weights]
    base = [int(math.floor(x)) for x in exact]
    leftover = total - sum(base)
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - base[i]), -i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def allocate_budget(
    budget: int,
    n_levels: int,
    policy: str = "mot17-style",
    weights: Optional[Seq[float]] = None,
) -> BudgetLedger:
    """Split a click budget across hierarchy levels.

    mot17-style puts half the clicks on the deepest three levels, 30% on the
    three before them, and 20% on everything earlier (node level included),
    splitting equally inside each group with remainders handed out deepest
    first. dancetrack-style first reserves 30% of the budget for box
    refinement and splits the rest the same way. Custom per-level weights are
    accepted via the "weighted" policy.
    """
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    if n_levels < 1:
        raise ValueError("need at least one level")

    if policy == "weighted":
        if weights is None or len(weights) != n_levels:
            raise ValueError("weighted policy needs one weight per level")
        alloc = _largest_remainder(budget, list(weights))
        return BudgetLedger(budget, alloc, 0)
    if policy not in ("mot17-style", "dancetrack-style"):
        raise ValueError(f"unknown budget policy {policy!r}")

    reserve = round(0.3 * budget) if policy == "dancetrack-style" else 0
    spend = budget - reserve

    deep = list(range(max(0, n_levels - 3), n_levels))
    mid = list(range(max(0, n_levels - 6), n_levels - 3)) if n_levels > 3 else []
    rest = list(range(0, max(0, n_levels - 6)))
    groups = [(rest, 0.2), (mid, 0.3), (deep, 0.5)]
    present = [(idx, w) for idx, w in groups if idx]
    totals = _largest_remainder(spend, [w for _, w in present])

    alloc = [0] * n_levels
    for (idx, _), g_total in zip(present, totals):
        shares = _largest_remainder(g_total, [1.0] * len(idx))
        for lvl, s in zip(idx, shares):
            alloc[lvl] = s
    return BudgetLedger(budget, alloc, reserve)


# ---------------------------------------------------------------------------
# Queries and responses


@dataclass(frozen=True)
class Candidate:
    cluster_id: int
    score: float
    det_ids: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"cluster_id": self.cluster_id, "score": self.score,
                "det_ids": list(self.det_ids)}

    @classmethod
    def from_dict(cls, data: dict) -> "Candidate":
        return cls(data["cluster_id"], data["score"], tuple(data["det_ids"]))


@dataclass(frozen=True)
class AnnotationQuery:
    query_id: str
    kind: str  # validate-node | refine-box | associate
    level: int
    clip_index: int
    subject: int  # det_id at the node level / for refine, cluster_id otherwise
    subject_dets: tuple[int, ...]
    uncertainty: float
    cost: int
    candidates: tuple[Candidate, ...] = ()

    def __post_init__(self):
        if self.kind not in QUERY_COST:
            raise ValueError(f"unknown query kind {self.kind!r}")
        if self.cost != QUERY_COST[self.kind]:
            raise ValueError(f"{self.kind} costs {QUERY_COST[self.kind]} clicks")
        if self.kind == "associate" and not self.candidates:
            raise ValueError("associate queries need at least one candidate")

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "kind": self.kind,
            "level": self.level,
            "clip_index": self.clip_index,
            "subject": self.subject,
            "subject_dets": list(self.subject_dets),
            "uncertainty": self.uncertainty,
            "cost": self.cost,
            "candidates": [c.to_dict() for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnnotationQuery":
        return cls(
            query_id=data["query_id"],
            kind=data["kind"],
            level=data["level"],
            clip_index=data["clip_index"],
            subject=data["subject"],
            subject_dets=tuple(data["subject_dets"]),
            uncertainty=data["uncertainty"],
            cost=data["cost"],
            candidates=tuple(Candidate.from_dict(c) for c in data["candidates"]),
        )


@dataclass(frozen=True)
class AnnotatorResponse:
    query_id: str
    action: str  # accept | reject | choose | none | box
    choice: Optional[int] = None
    box: Optional[Box] = None
    responder: str = "oracle"
    timestamp: int = 0

    def __post_init__(self):
        if self.action not in ("accept", "reject", "choose", "none", "box"):
            raise ValueError(f"unknown response action {self.action!r}")
        if self.action == "choose" and self.choice is None:
            raise ValueError("choose responses carry a candidate id")
        if self.action == "box" and self.box is None:
            raise ValueError("box responses carry a box")

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "action": self.action,
            "choice": self.choice,
            "box": None if self.box is None else list(self.box),
            "responder": self.responder,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnnotatorResponse":
        box = data.get("box")
        return cls(
            query_id=data["query_id"],
            action=data["action"],
            choice=data.get("choice"),
            box=None if box is None else Box(*box),
            responder=data.get("responder", "oracle"),
            timestamp=data.get("timestamp", 0),
        )


class AuditLog:
    """Append-only record of everything the run did."""

    def __init__(self):
        self.records: list[dict] = []

    def append(self, event: str, **payload) -> None:
        self.records.append({"t": len(self.records), "event": event, **payload})

    def clicks(self) -> int:
        return sum(r.get("clicks", 0) for r in self.records if r["event"] == "response-applied")

    def responses(self) -> list[AnnotatorResponse]:
        return [
            AnnotatorResponse.from_dict(r["response"])
            for r in self.records
            if r["event"] == "response-applied"
        ]

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path) -> "AuditLog":
        log = cls()
        with Path(path).open() as fh:
            for line in fh:
                log.records.append(json.loads(line))
        return log


# ---------------------------------------------------------------------------
# Query selection


def _level_rng(seed: int, level: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0xAC71, level]))


def _kcenter(points: np.ndarray, k: int, rng: np.random.Generator) -> list[int]:
    """Greedy k-center: pick a seeded reference, start from the point farthest
    from it, then repeatedly take the point farthest from the chosen set.
    Ties go to the lower index."""
    n = points.shape[0]
    if n == 0 or k <= 0:
        return []
    k = min(k, n)
    ref = int(rng.integers(n))
    d = np.linalg.norm(points - points[ref], axis=1)
    first = int(np.argmax(d))
    chosen = [first]
    dist = np.linalg.norm(points - points[first], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(dist))
        if dist[nxt] <= 0.0 and len(chosen) >= 1:
            # all remaining points coincide with chosen ones; fill by index
            remaining = [i for i in range(n) if i not in chosen]
            chosen.extend(remaining[: k - len(chosen)])
            break
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(points - points[nxt], axis=1))
    return chosen[:k]


def _cluster_rep_vector(c: Cluster, bounds: FrameBounds, clip_len: int) -> np.ndarray:
    head = [
        c.first_frame / max(clip_len, 1),
        c.first_box.center[0] / bounds.width,
        c.first_box.center[1] / bounds.height,
    ]
    emb = c.mean_embedding if c.mean_embedding is not None else np.zeros(1)
    return np.concatenate([np.asarray(head), emb])


def select_node_queries(
    node_levels: dict[int, NodeLevel],
    clamps: ClampSet,
    budget_clicks: int,
    acquisition: str,
    seed: int,
    id_start: int = 1,
) -> list[AnnotationQuery]:
    """One batch of validate-node queries over every clip's node level."""
    if acquisition not in ACQUISITIONS:
        raise UnknownAcquisitionError(f"unknown acquisition {acquisition!r}")
    cost = QUERY_COST["validate-node"]
    k = budget_clicks // cost
    if k <= 0:
        return []

    open_subjects = []  # (clip_index, detection, score)
    for ci in sorted(node_levels):
        nl = node_levels[ci]
        for d in nl.detections:
            if clamps.node_state(d.det_id) is None:
                open_subjects.append((ci, d, nl.scores[d.det_id]))
    if not open_subjects:
        return []

    rng = _level_rng(seed, 0)
    if acquisition in ("spam", "entropy-box"):
        ranked = sorted(open_subjects, key=lambda t: (-entropy(t[2]), t[1].det_id))
        picked = ranked[:k]
    elif acquisition == "random":
        idx = rng.permutation(len(open_subjects))[:k]
        picked = [open_subjects[i] for i in sorted(idx)]
    elif acquisition == "entropy-image":
        by_frame: dict[int, list] = {}
        for item in open_subjects:
            by_frame.setdefault(item[1].frame, []).append(item)
        frame_rank = sorted(
            by_frame, key=lambda f: (-float(np.mean([entropy(s) for _, _, s in by_frame[f]])), f)
        )
        picked = []
        for f in frame_rank:
            for item in sorted(by_frame[f], key=lambda t: t[1].det_id):
                if len(picked) >= k:
                    break
                picked.append(item)
            if len(picked) >= k:
                break
    else:  # coreset
        feats = []
        for ci, d, s in open_subjects:
            nl = node_levels[ci]
            row = nl.features[[x.det_id for x in nl.detections].index(d.det_id)]
            feats.append(row)
        chosen = _kcenter(np.asarray(feats), k, rng)
        picked = [open_subjects[i] for i in chosen]

    queries = []
    for n, (ci, d, s) in enumerate(picked):
        queries.append(
            AnnotationQuery(
                query_id=f"q{id_start + n:06d}",
                kind="validate-node",
                level=0,
                clip_index=ci,
                subject=d.det_id,
                subject_dets=(d.det_id,),
                uncertainty=entropy(s),
                cost=cost,
            )
        )
    return queries


def _successor_candidates(
    graph: LevelGraph, subject: int, clamps: ClampSet
) -> list[Candidate]:
    """Live candidate list for an associate subject: unclamped successor
    edges whose target is not already committed to another cluster, sorted by
    score descending (ties by lower id)."""
    out = []
    for e in graph.edges:
        if e.u != subject:
            continue
        if clamps.edge_state(graph.level, e.u, e.v) is not None:
            continue
        partner = clamps.forced_on_partner(graph.level, e.v)
        if partner is not None and partner != subject:
            continue
        target = graph.clusters.get(e.v)
        if target is None or cluster_rejected(target, clamps):
            continue
        out.append(Candidate(e.v, e.score, tuple(d.det_id for d in target.members)))
    out.sort(key=lambda c: (-c.score, c.cluster_id))
    return out


def _subject_committed(graph: LevelGraph, subject: int, clamps: ClampSet) -> bool:
    partner = clamps.forced_on_partner(graph.level, subject)
    return partner is not None


def select_edge_queries(
    graphs: dict[int, LevelGraph],
    level: int,
    clamps: ClampSet,
    budget_clicks: int,
    acquisition: str,
    seed: int,
    bounds: FrameBounds,
    clip_length: int,
    id_start: int = 1,
) -> list[AnnotationQuery]:
    """One batch of associate queries over every clip's graph at one level.

    Subjects are earlier-half clusters with at least one open successor edge.
    The uncertainty-driven strategies rank them by highest successor-edge
    entropy; the detection-centric baselines fall back to seeded random
    association, and coreset spreads subjects over cluster representative
    vectors.
    """
    if acquisition not in ACQUISITIONS:
        raise UnknownAcquisitionError(f"unknown acquisition {acquisition!r}")
    cost = QUERY_COST["associate"]
    k = budget_clicks // cost
    if k <= 0:
        return []

    subjects = []  # (clip_index, cluster, uncertainty, candidates)
    for ci in sorted(graphs):
        graph = graphs[ci]
        for cid in sorted(graph.clusters):
            if _subject_committed(graph, cid, clamps):
                continue
            cands = _successor_candidates(graph, cid, clamps)
            if not cands:
                continue
            unc = max(entropy(c.score) for c in cands)
            subjects.append((ci, graph.clusters[cid], unc, cands))
    if not subjects:
        return []

    rng = _level_rng(seed, level)
    if acquisition == "spam":
        ranked = sorted(subjects, key=lambda t: (-t[2], t[1].cluster_id))
        picked = ranked[:k]
    elif acquisition in ("random", "entropy-image", "entropy-box"):
        idx = rng.permutation(len(subjects))[:k]
        picked = [subjects[i] for i in sorted(idx)]
    else:  # coreset over cluster representatives
        feats = [_cluster_rep_vector(c, bounds, clip_length) for _, c, _, _ in subjects]
        dim = max(f.size for f in feats)
        feats = np.stack([np.pad(f, (0, dim - f.size)) for f in feats])
        chosen = _kcenter(feats, k, rng)
        picked = [subjects[i] for i in chosen]

    queries = []
    for n, (ci, cluster, unc, cands) in enumerate(picked):
        queries.append(
            AnnotationQuery(
                query_id=f"q{id_start + n:06d}",
                kind="associate",
                level=level,
                clip_index=ci,
                subject=cluster.cluster_id,
                subject_dets=tuple(d.det_id for d in cluster.members),
                uncertainty=unc,
                cost=cost,
                candidates=tuple(cands),
            )
        )
    return queries


# ---------------------------------------------------------------------------
# The labeling run


@dataclass
class RunResult:
    labels: LabelSet
    ledger: BudgetLedger
    audit: AuditLog
    state: SolveState
    refined: dict[int, Box]


class LabelingRun:
    """State machine for one sequence's annotation session.

    Levels are processed in order; queries for the current level sit in a
    pending queue and are served with freshly recomputed candidates. The run
    is deterministic given (sequence, params, config, ledger, acquisition,
    seed) and the response stream, which is what makes audit-log replay and
    service resume exact.
    """

    def __init__(
        self,
        seq: Sequence,
        params: ScorerParams,
        cfg: HierarchyConfig,
        ledger: BudgetLedger,
        acquisition: str = "spam",
        seed: int = 0,
        min_conf: float = 0.1,
    ):
        if acquisition not in ACQUISITIONS:
            raise UnknownAcquisitionError(f"unknown acquisition {acquisition!r}")
        self.seq = seq
        self.params = params
        self.cfg = cfg
        self.ledger = ledger
        self.acquisition = acquisition
        self.seed = seed
        self.min_conf = min_conf
        self.clamps = ClampSet()
        self.refined: dict[int, Box] = {}
        self.audit = AuditLog()
        self.bounds = FrameBounds(seq.image_width, seq.image_height)

        self.clips = split_clips(
            admitted_detections(seq, min_conf), seq.frame_count, cfg
        )
        self.node_levels: dict[int, NodeLevel] = {}
        self.clusters: dict[int, list[Cluster]] = {}
        self.graphs: dict[int, LevelGraph] = {}
        self.graph_history: dict[int, dict[int, LevelGraph]] = {}
        self.level = 0  # 0 = node level; 1..len(spans) = edge levels
        self.phase = "levels"  # levels -> refine -> complete
        self.pending: deque[AnnotationQuery] = deque()
        self.open_queries: dict[str, AnnotationQuery] = {}
        self.answered: dict[str, AnnotatorResponse] = {}
        self.skipped: set[str] = set()
        self._next_qid = 1
        self._next_cluster = CLUSTER_ID_BASE
        self._clock = 0
        self._final_state: Optional[SolveState] = None

        self.audit.append(
            "session-start",
            seq_id=seq.seq_id,
            acquisition=acquisition,
            seed=seed,
            budget=ledger.to_dict(),
            config=cfg.to_dict(),
        )
        self._enter_node_level()

    # -- level transitions ---------------------------------------------------

    def _enter_node_level(self) -> None:
        for clip in self.clips:
            self.node_levels[clip.index] = validate_nodes(
                clip, self.params, self.cfg, self.clamps, self.bounds
            )
        queries = select_node_queries(
            self.node_levels,
            self.clamps,
            self.ledger.remaining(0),
            self.acquisition,
            self.seed,
            id_start=self._next_qid,
        )
        self._issue(queries, level=0)

    def _finish_node_level(self) -> None:
        for clip in self.clips:
            nl = validate_nodes(clip, self.params, self.cfg, self.clamps, self.bounds)
            self.node_levels[clip.index] = nl
            by_id = {d.det_id: d for d in clip.detections}
            self.clusters[clip.index] = make_singletons(
                [by_id[i] for i in nl.accepted]
            )
        self.audit.append(
            "level-solved",
            level=0,
            accepted=sum(len(nl.accepted) for nl in self.node_levels.values()),
        )

    def _enter_edge_level(self) -> None:
        span = self.cfg.edge_spans[self.level - 1]
        self.graphs = {}
        for clip in self.clips:
            self.graphs[clip.index] = build_level_graph(
                self.clusters[clip.index],
                clip.index,
                self.level,
                span,
                clip.first_frame,
                self.params,
                self.cfg,
                self.clamps,
            )
        self.graph_history[self.level] = dict(self.graphs)
        queries = select_edge_queries(
            self.graphs,
            self.level,
            self.clamps,
            self.ledger.remaining(self.level),
            self.acquisition,
            self.seed,
            self.bounds,
            self.cfg.clip_length,
            id_start=self._next_qid,
        )
        self._issue(queries, level=self.level)

    def _finish_edge_level(self) -> None:
        objective = 0.0
        for clip in self.clips:
            res = solve_level(self.graphs[clip.index], self.clamps, self._next_cluster)
            self._next_cluster = res.next_cluster_id
            self.clusters[clip.index] = res.clusters
            objective += res.objective
        self.audit.append("level-solved", level=self.level, objective=objective)

    def _enter_refine(self) -> None:
        self.phase = "refine"
        dets = []
        for _, c in self._final_state.tracks:
            for d in c.members:
                if self.clamps.node_state(d.det_id) is not False:
                    dets.append(d)
        dets.sort(key=lambda d: (d.confidence, d.det_id))
        cost = QUERY_COST["refine-box"]
        k = self.ledger.reserve_remaining() // cost
        queries = []
        for n, d in enumerate(dets[:k]):
            queries.append(
                AnnotationQuery(
                    query_id=f"q{self._next_qid + n:06d}",
                    kind="refine-box",
                    level=len(self.cfg.edge_spans),
                    clip_index=(d.frame - 1) // self.cfg.clip_length,
                    subject=d.det_id,
                    subject_dets=(d.det_id,),
                    uncertainty=0.0,
                    cost=cost,
                )
            )
        self._issue(queries, level=-1)

    def _finalize(self) -> None:
        clip_results = []
        n_edge = len(self.cfg.edge_spans)
        for clip in self.clips:
            graphs = [self.graph_history[l][clip.index] for l in range(1, n_edge + 1)]
            clip_results.append(
                ClipResult(clip, self.node_levels[clip.index], graphs, [],
                           self.clusters[clip.index])
            )
        final, boundary, self._next_cluster = link_clips(
            clip_results, self.params, self.cfg, self.clamps, self._next_cluster
        )
        tracks = [(tid, c) for tid, c in enumerate(final, start=1)]
        self._final_state = SolveState(
            self.seq.seq_id, self.cfg, clip_results, tracks, boundary
        )

    def _issue(self, queries: list[AnnotationQuery], level: int) -> None:
        for q in queries:
            self.pending.append(q)
            self.open_queries[q.query_id] = q
            self._next_qid += 1
            self.audit.append("query-issued", query=q.to_dict())

    def _advance(self) -> None:
        """Close out the current stage and open the next one that has work."""
        if self.phase == "levels":
            if self.level == 0:
                self._finish_node_level()
            else:
                self._finish_edge_level()
            if self.level < len(self.cfg.edge_spans):
                self.level += 1
                self._enter_edge_level()
                return
            self._finalize()
            if self.ledger.reserve_remaining() >= QUERY_COST["refine-box"]:
                self._enter_refine()
                return
            self._complete()
        elif self.phase == "refine":
            self._complete()

    def _complete(self) -> None:
        self.phase = "complete"
        self.audit.append(
            "complete",
            clicks=self.ledger.spent_total,
            refined=len(self.refined),
            clamps={"node": self.clamps.n_node, "edge": self.clamps.n_edge},
        )

    # -- serving -------------------------------------------------------------

    def _refresh(self, q: AnnotationQuery) -> Optional[AnnotationQuery]:
        """Re-derive the query against live clamps; None means it resolved
        itself and costs nothing."""
        if q.kind == "validate-node":
            states = [self.clamps.node_state(d) for d in q.subject_dets]
            if all(s is not None for s in states):
                return None
            return q
        if q.kind == "refine-box":
            # a rejected detection has no box worth refining; a confirmed one does
            if self.clamps.node_state(q.subject) is False:
                return None
            return q
        graph = self.graphs.get(q.clip_index)
        if graph is None or q.subject not in graph.clusters:
            return None
        if cluster_rejected(graph.clusters[q.subject], self.clamps):
            return None
        if _subject_committed(graph, q.subject, self.clamps):
            return None
        cands = _successor_candidates(graph, q.subject, self.clamps)
        if not cands:
            return None
        return replace(q, candidates=tuple(cands))

    def next_queries(self, limit: int = 1) -> list[AnnotationQuery]:
        """Serve up to `limit` open queries, advancing stages as they drain.
        An empty result means the session is complete."""
        served: list[AnnotationQuery] = []
        cursor = 0
        while len(served) < limit:
            while self.pending and (
                self.pending[0].query_id in self.answered
                or self.pending[0].query_id in self.skipped
                or self.pending[0].query_id not in self.open_queries
            ):
                self.pending.popleft()
            if cursor >= len(self.pending):
                if self.pending:
                    break  # every remaining open query already served this call
                if self.phase == "complete":
                    break
                self._advance()
                cursor = 0
                continue
            q = self.pending[cursor]
            if q.query_id in self.answered or q.query_id in self.skipped:
                cursor += 1
                continue
            live = self._refresh(q)
            if live is None:
                del self.pending[cursor]
                self.open_queries.pop(q.query_id, None)
                self.audit.append("auto-resolved", query_id=q.query_id)
                continue
            self.open_queries[q.query_id] = live
            self.audit.append("query-served", query=live.to_dict())
            served.append(live)
            cursor += 1
        return served

    def skip(self, query_id: str) -> None:
        if query_id not in self.open_queries:
            raise StaleResponseError(f"no open query {query_id}")
        self.skipped.add(query_id)
        del self.open_queries[query_id]
        self.audit.append("query-skipped", query_id=query_id)

    # -- responses -----------------------------------------------------------

    def submit(self, response: AnnotatorResponse) -> None:
        """Apply one response: validate the pairing, write the clamps, debit
        the clicks. Duplicate or stale responses are rejected with an audit
        record; contradictions with existing clamps raise."""
        qid = response.query_id
        if qid in self.answered:
            self.audit.append("response-rejected", query_id=qid, reason="duplicate")
            raise StaleResponseError(f"query {qid} already answered")
        q = self.open_queries.get(qid)
        if q is None:
            self.audit.append("response-rejected", query_id=qid, reason="unknown-or-resolved")
            raise StaleResponseError(f"no open query {qid}")
        live = self._refresh(q)
        if live is None:
            del self.open_queries[qid]
            self.audit.append("auto-resolved", query_id=qid)
            raise StaleResponseError(f"query {qid} resolved itself; answer discarded")

        response = replace(response, timestamp=self._clock)
        self._clock += 1
        clamps_made = self._apply(live, response)
        self.answered[qid] = response
        del self.open_queries[qid]
        if live.kind == "refine-box":
            self.ledger.debit_reserve(live.cost, live.kind)
        else:
            self.ledger.debit(live.level, live.cost, live.kind)
        self.audit.append(
            "response-applied",
            query_id=qid,
            response=response.to_dict(),
            clicks=live.cost,
            clamps=clamps_made,
        )

    def _apply(self, q: AnnotationQuery, r: AnnotatorResponse) -> int:
        made = 0
        if q.kind == "validate-node":
            if r.action not in ("accept", "reject"):
                raise StaleResponseError("validate queries take accept or reject")
            value = r.action == "accept"
            for det_id in q.subject_dets:
                if self.clamps.node_state(det_id) is None:
                    made += 1
                self.clamps.set_node(det_id, value, r.query_id)
        elif q.kind == "refine-box":
            if r.action == "box":
                self.refined[q.subject] = Box(*r.box)
                made += 1
            elif r.action == "reject":
                if self.clamps.node_state(q.subject) is None:
                    made += 1
                self.clamps.set_node(q.subject, False, r.query_id)
            else:
                raise StaleResponseError("refine queries take box or reject")
        else:  # associate
            cand_ids = [c.cluster_id for c in q.candidates]
            if r.action == "choose":
                if r.choice not in cand_ids:
                    raise StaleResponseError(
                        f"candidate {r.choice} is not open for query {q.query_id}"
                    )
                self.clamps.set_edge(q.level, q.subject, r.choice, True, r.query_id)
                made += 1
                for other in cand_ids:
                    if other != r.choice:
                        self.clamps.set_edge(q.level, q.subject, other, False, r.query_id)
                        made += 1
            elif r.action == "none":
                for other in cand_ids:
                    self.clamps.set_edge(q.level, q.subject, other, False, r.query_id)
                    made += 1
            else:
                raise StaleResponseError("associate queries take choose or none")
        return made

    # -- results ---------------------------------------------------------------

    @property
    def complete(self) -> bool:
        return self.phase == "complete"

    def result(self) -> RunResult:
        if not self.complete:
            raise RuntimeError("session is not complete")
        labels = extract_labels(self._final_state, clamps=self.clamps, refined=self.refined)
        return RunResult(labels, self.ledger, self.audit, self._final_state, self.refined)


def run_active_labeling(
    seq: Sequence,
    params: ScorerParams,
    cfg: HierarchyConfig,
    ledger: BudgetLedger,
    annotator,
    acquisition: str = "spam",
    seed: int = 0,
    min_conf: float = 0.1,
) -> RunResult:
    """Drive a full labeling session with an in-process annotator.

    The annotator is anything with answer(query) -> AnnotatorResponse | None;
    None skips the query (no clicks)."""
    run = LabelingRun(seq, params, cfg, ledger, acquisition, seed, min_conf)
    while True:
        batch = run.next_queries(limit=1)
        if not batch:
            break
        q = batch[0]
        response = annotator.answer(q)
        if response is None:
            run.skip(q.query_id)
        else:
            run.submit(response)
    return run.result()


# ---------------------------------------------------------------------------
# Interpolation baseline


def interpolation_baseline(seq: Sequence, keep_ratio: float) -> LabelSet:
    """Keep ground truth on ceil(r * frame_count) uniformly spaced frames and
    linearly interpolate each track between kept frames. No extrapolation
    beyond a track's first and last kept frames."""
    if not 0.0 < keep_ratio <= 1.0:
        raise ValueError("keep ratio must lie in (0, 1]")
    if seq.ground_truth is None:
        raise ValueError("interpolation baseline needs ground truth")
    n_keep = math.ceil(keep_ratio * seq.frame_count)
    kept_frames = sorted({int(round(f)) for f in np.linspace(1, seq.frame_count, n_keep)})
    kept = set(kept_frames)

    by_track: dict[int, list[LabelEntry]] = {}
    for e in seq.ground_truth.entries:
        by_track.setdefault(e.track_id, []).append(e)
    out: list[LabelEntry] = []
    for tid in sorted(by_track):
        entries = sorted(by_track[tid], key=lambda e: e.frame)
        anchors = [e for e in entries if e.frame in kept]
        frames_present = {e.frame for e in entries}
        for a, b in zip(anchors, anchors[1:]):
            out.append(a)
            gap = b.frame - a.frame
            for f in range(a.frame + 1, b.frame):
                if f not in frames_present:
                    continue
                t = (f - a.frame) / gap
                box = Box(
                    a.box.left + (b.box.left - a.box.left) * t,
                    a.box.top + (b.box.top - a.box.top) * t,
                    a.box.width + (b.box.width - a.box.width) * t,
                    a.box.height + (b.box.height - a.box.height) * t,
                )
                out.append(LabelEntry(f, tid, box, provenance="interpolated"))
        if anchors:
            out.append(anchors[-1])
    return LabelSet(seq.seq_id, tuple(out))
