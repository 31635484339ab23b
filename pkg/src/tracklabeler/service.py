"""HTTP annotation service.

Sessions wrap a LabelingRun behind JSON endpoints so a browser (or the
oracle client) can answer queries remotely. Every state-changing call is
appended to that session's event log before the response goes out; restarting
the service replays the log against a freshly built run, which reproduces the
pending-query list, the ledger, and the audit trail exactly. Within a session
mutations are serialized by a lock; sessions are independent.

Bodies are JSON throughout. Frames of synthetic sequences are served as
vector scene descriptions (the UI rasterizes); real image files are passed
through as bytes when the data root holds them.
"""

from __future__ import annotations

import json
import re
import threading
import uuid
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse

from .active import (
    AnnotationQuery,
    AnnotatorResponse,
    LabelingRun,
    StaleResponseError,
    allocate_budget,
)
from .core import LabelSet, Sequence
from .engine import PipelineConfig, target_sequence_of
from .hier_solver import ConstraintConflictError, pseudo_label
from .metrics import evaluate
from .mot_io import load_sequence
from .scorer import (
    ScorerParams,
    load_params,
    make_training_set,
    save_params,
    self_train,
    train_scorer,
)
from .synthgen import generate

SESSION_ID_PATTERN = re.compile(r"^[a-z0-9][a-z0-9-]{0,63}$")


def _error(status: int, code: str, message: str, detail: Optional[dict] = None) -> JSONResponse:
    body = {"error": {"code": code, "message": message}}
    if detail:
        body["error"]["detail"] = detail
    return JSONResponse(body, status_code=status)


class _HttpError(Exception):
    def __init__(self, status: int, code: str, message: str, detail: Optional[dict] = None):
        super().__init__(message)
        self.response = _error(status, code, message, detail)


def _detection_view(det) -> dict:
    return {
        "det_id": det.det_id,
        "frame": det.frame,
        "box": list(det.box),
        "confidence": det.confidence,
    }


class SessionState:
    """One annotation session: the run, its worlds, and its event log."""

    def __init__(self, session_id: str, config: PipelineConfig, directory: Path,
                 seq: Sequence, adapted: ScorerParams):
        self.session_id = session_id
        self.config = config
        self.directory = directory
        self.seq = seq
        self.adapted = adapted
        self.lock = threading.Lock()
        ledger = allocate_budget(
            config.budget, config.hier.n_levels, config.policy, weights=config.weights
        )
        self.run = LabelingRun(
            seq, adapted, config.hier, ledger,
            acquisition=config.acquisition, seed=config.seed,
            min_conf=config.admission_threshold,
        )
        self._dets = {d.det_id: d for d in seq.detections}
        self._events_path = directory / "events.jsonl"

    # -- event log -----------------------------------------------------------

    def record(self, event: dict) -> None:
        with open(self._events_path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def replay(self) -> None:
        if not self._events_path.exists():
            return
        with open(self._events_path, "r", encoding="utf-8") as fh:
            for line in fh:
                event = json.loads(line)
                kind = event["event"]
                if kind == "serve":
                    self.run.next_queries(event["limit"])
                elif kind == "submit":
                    try:
                        self.run.submit(AnnotatorResponse.from_dict(event["response"]))
                    except (StaleResponseError, ConstraintConflictError):
                        pass  # the original call already reported the failure
                elif kind == "skip":
                    try:
                        self.run.skip(event["query_id"])
                    except StaleResponseError:
                        pass

    # -- views ---------------------------------------------------------------

    def query_view(self, q: AnnotationQuery) -> dict:
        subjects = [_detection_view(self._dets[i]) for i in q.subject_dets]
        candidates = []
        for c in q.candidates:
            candidates.append({
                "cluster_id": c.cluster_id,
                "score": c.score,
                "dets": [_detection_view(self._dets[i]) for i in c.det_ids],
            })
        frames = sorted({d["frame"] for d in subjects}
                        | {d["frame"] for c in candidates for d in c["dets"]})
        return {
            "query": q.to_dict(),
            "subjects": subjects,
            "candidates": candidates,
            "frames": frames,
            "seq_id": self.seq.seq_id,
        }

    def budget_view(self) -> dict:
        led = self.run.ledger
        return {
            "ledger": led.to_dict(),
            "spent_total": led.spent_total,
            "remaining_by_level": [led.remaining(i) for i in range(len(led.allocations))],
            "reserve_remaining": led.reserve_remaining(),
        }

    def status_view(self) -> dict:
        return {
            "session_id": self.session_id,
            "seq_id": self.seq.seq_id,
            "complete": self.run.complete,
            "phase": self.run.phase,
            "budget": self.budget_view(),
            "gt_available": self.seq.ground_truth is not None,
        }

    def current_labels(self) -> tuple[LabelSet, bool]:
        """Final labels when the run is complete, else a consistent snapshot
        solved under the clamps collected so far."""
        if self.run.complete:
            return self.run.result().labels, True
        labels, _ = pseudo_label(
            self.seq, self.adapted, self.config.hier,
            min_conf=self.config.admission_threshold,
            clamps=self.run.clamps, refined=self.run.refined,
        )
        return labels, False


def _labels_payload(labels: LabelSet, complete: bool) -> dict:
    return {
        "seq_id": labels.seq_id,
        "complete": complete,
        "entries": [
            {
                "frame": e.frame,
                "track_id": e.track_id,
                "box": list(e.box),
                "provenance": e.provenance,
                "score": e.score,
            }
            for e in labels.sorted().entries
        ],
    }


class ServiceState:
    """All sessions plus the sequence registry behind the frames endpoint."""

    def __init__(self, data_root: Path):
        self.data_root = Path(data_root)
        self.sessions_root = self.data_root / "sessions"
        self.sessions_root.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, SessionState] = {}
        self._params_cache: dict[str, ScorerParams] = {}
        self._registry_lock = threading.Lock()

    # -- scorer params -------------------------------------------------------

    def _trained_params(self, config: PipelineConfig, directory: Path) -> ScorerParams:
        """Pretrain on the source and self-train on the target, reusing any
        snapshot already in the session directory (or an in-process cache)."""
        snap = directory / "adapted.params"
        if snap.exists():
            return load_params(snap)
        key = PipelineConfig(
            source=config.source, target=config.target,
            admission_threshold=config.admission_threshold, hier=config.hier,
            pretrain_hyper=config.pretrain_hyper, selftrain_hyper=config.selftrain_hyper,
            selftrain_rounds=config.selftrain_rounds,
        ).config_hash()
        params = self._params_cache.get(key)
        if params is None:
            src = generate(config.source)
            train_set = make_training_set(
                src, src.ground_truth, config.hier, min_conf=config.admission_threshold
            )
            params = train_scorer(
                train_set, config.pretrain_hyper, provenance="pretrain", node_fallback=True
            )
            if config.selftrain_rounds > 0:
                params = self_train(
                    [target_sequence_of(config)], params, config.hier,
                    hyper=config.selftrain_hyper,
                    min_conf=config.admission_threshold,
                    rounds=config.selftrain_rounds,
                )
            self._params_cache[key] = params
        save_params(params, snap)
        return params

    # -- sessions ------------------------------------------------------------

    def create_session(self, body: dict) -> SessionState:
        if not isinstance(body, dict):
            raise _HttpError(400, "malformed-body", "expected a JSON object")
        raw_config = body.get("config", body)
        session_id = body.get("session_id") or uuid.uuid4().hex[:12]
        if not SESSION_ID_PATTERN.match(str(session_id)):
            raise _HttpError(400, "bad-session-id",
                             "session_id must be a short lowercase slug")
        try:
            config = PipelineConfig.from_dict(raw_config)
        except (KeyError, TypeError, ValueError) as exc:
            raise _HttpError(400, "bad-config", f"invalid pipeline config: {exc}")
        with self._registry_lock:
            directory = self.sessions_root / session_id
            if session_id in self.sessions or directory.exists():
                raise _HttpError(409, "session-exists",
                                 f"session {session_id!r} already exists")
            directory.mkdir(parents=True)
            (directory / "session.json").write_text(
                json.dumps({"session_id": session_id, "config": config.to_dict()},
                           indent=2, sort_keys=True) + "\n"
            )
            state = self._build(session_id, config, directory)
            self.sessions[session_id] = state
            return state

    def _build(self, session_id: str, config: PipelineConfig, directory: Path) -> SessionState:
        seq = target_sequence_of(config)
        adapted = self._trained_params(config, directory)
        state = SessionState(session_id, config, directory, seq, adapted)
        state.replay()
        return state

    def get_session(self, session_id: str) -> SessionState:
        with self._registry_lock:
            state = self.sessions.get(session_id)
            if state is not None:
                return state
            meta_path = self.sessions_root / session_id / "session.json"
            if not meta_path.exists():
                raise _HttpError(404, "unknown-session", f"no session {session_id!r}")
            meta = json.loads(meta_path.read_text())
            state = self._build(
                session_id,
                PipelineConfig.from_dict(meta["config"]),
                self.sessions_root / session_id,
            )
            self.sessions[session_id] = state
            return state

    # -- frames ---------------------------------------------------------------

    def sequence_for(self, seq_id: str) -> Sequence:
        for state in self.sessions.values():
            if state.seq.seq_id == seq_id:
                return state.seq
        candidate = self.data_root / seq_id
        if (candidate / "seqinfo.ini").exists():
            return load_sequence(candidate, seq_id=seq_id)
        raise _HttpError(404, "unknown-sequence", f"no sequence {seq_id!r}")


def create_app(data_root) -> FastAPI:
    state = ServiceState(Path(data_root))
    app = FastAPI(title="tracklabeler annotation service")
    app.state.service = state

    @app.exception_handler(_HttpError)
    async def handle_http_error(request: Request, exc: _HttpError):
        return exc.response

    async def read_json(request: Request) -> dict:
        try:
            return json.loads(await request.body())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise _HttpError(400, "malformed-body", f"body is not valid JSON: {exc}")

    @app.post("/sessions")
    async def create_session(request: Request):
        body = await read_json(request)
        session = state.create_session(body)
        return JSONResponse(session.status_view(), status_code=201)

    @app.get("/sessions/{session_id}")
    def session_status(session_id: str):
        session = state.get_session(session_id)
        with session.lock:
            return session.status_view()

    @app.get("/sessions/{session_id}/queries")
    def session_queries(session_id: str, limit: int = 1):
        session = state.get_session(session_id)
        if limit < 1:
            raise _HttpError(400, "bad-limit", "limit must be >= 1")
        with session.lock:
            session.record({"event": "serve", "limit": limit})
            queries = session.run.next_queries(limit)
            return {
                "queries": [session.query_view(q) for q in queries],
                "complete": session.run.complete,
                "budget": session.budget_view(),
            }

    @app.post("/sessions/{session_id}/responses")
    async def session_responses(session_id: str, request: Request):
        session = state.get_session(session_id)
        body = await read_json(request)
        try:
            response = AnnotatorResponse.from_dict(body)
        except (KeyError, TypeError, ValueError) as exc:
            raise _HttpError(400, "bad-response", f"invalid response: {exc}")
        with session.lock:
            session.record({"event": "submit", "response": response.to_dict()})
            try:
                session.run.submit(response)
            except ConstraintConflictError as exc:
                raise _HttpError(409, "conflicting-clamp", str(exc))
            except StaleResponseError as exc:
                raise _HttpError(409, "stale-response", str(exc),
                                 detail={"query_id": response.query_id})
            return {
                "applied": True,
                "query_id": response.query_id,
                "budget": session.budget_view(),
                "complete": session.run.complete,
            }

    @app.post("/sessions/{session_id}/skips")
    async def session_skips(session_id: str, request: Request):
        session = state.get_session(session_id)
        body = await read_json(request)
        query_id = body.get("query_id")
        if not isinstance(query_id, str):
            raise _HttpError(400, "bad-skip", "skip needs a query_id")
        with session.lock:
            session.record({"event": "skip", "query_id": query_id})
            try:
                session.run.skip(query_id)
            except StaleResponseError as exc:
                raise _HttpError(409, "stale-response", str(exc),
                                 detail={"query_id": query_id})
            return {"skipped": query_id, "budget": session.budget_view()}

    @app.get("/sessions/{session_id}/labels")
    def session_labels(session_id: str):
        session = state.get_session(session_id)
        with session.lock:
            labels, complete = session.current_labels()
        return _labels_payload(labels, complete)

    @app.get("/sessions/{session_id}/metrics")
    def session_metrics(session_id: str):
        session = state.get_session(session_id)
        if session.seq.ground_truth is None:
            raise _HttpError(404, "no-ground-truth",
                             "this session's sequence has no ground truth")
        with session.lock:
            labels, complete = session.current_labels()
            report = evaluate(session.seq.ground_truth, labels)
        return {"complete": complete, **report.to_dict()}

    @app.get("/frames/{seq_id}/{frame}")
    def frame(seq_id: str, frame: int):
        image = state.data_root / seq_id / "img1" / f"{frame:06d}.jpg"
        if image.exists():
            return FileResponse(image, media_type="image/jpeg")
        seq = state.sequence_for(seq_id)
        if not 1 <= frame <= seq.frame_count:
            raise _HttpError(404, "unknown-frame",
                             f"frame {frame} outside 1..{seq.frame_count}")
        return {
            "kind": "vector-scene",
            "seq_id": seq_id,
            "frame": frame,
            "image_width": seq.image_width,
            "image_height": seq.image_height,
            "detections": [
                _detection_view(d) for d in seq.detections if d.frame == frame
            ],
        }

    return app


def serve(host: str = "127.0.0.1", port: int = 8321, data_root=".") -> None:
    """Run the annotation service until interrupted."""
    import uvicorn

    uvicorn.run(create_app(data_root), host=host, port=port, log_level="warning")
