"""Remote oracle: answers a service session from ground truth.

The client pulls pending queries over HTTP, reconstructs each one, answers it
with the same ground-truth oracle the in-process path uses, and posts the
response back. Both sides are deterministic, so a session completed this way
carries exactly the labels an in-process run would have produced.

`drive_session` accepts any httpx-compatible client (a real `httpx.Client`
against a running server, or a test-transport client), which keeps the loop
testable without sockets.
"""

from __future__ import annotations

from typing import Optional, Union

import httpx

from .active import AnnotationQuery
from .annotator import OracleAnnotator
from .engine import PipelineConfig, target_sequence_of


class ServiceError(RuntimeError):
    """A non-2xx reply from the annotation service."""

    def __init__(self, status_code: int, payload):
        self.status_code = status_code
        self.payload = payload
        detail = payload.get("error", payload) if isinstance(payload, dict) else payload
        super().__init__(f"service replied {status_code}: {detail}")


def _check(resp: httpx.Response) -> dict:
    try:
        payload = resp.json()
    except ValueError:
        payload = {"raw": resp.text}
    if resp.status_code >= 300:
        raise ServiceError(resp.status_code, payload)
    return payload


class SessionClient:
    """Thin typed wrapper over the session endpoints."""

    def __init__(self, client: httpx.Client):
        self.client = client

    def create(self, config: dict, session_id: Optional[str] = None) -> dict:
        body = {"config": config}
        if session_id is not None:
            body["session_id"] = session_id
        return _check(self.client.post("/sessions", json=body))

    def status(self, session_id: str) -> dict:
        return _check(self.client.get(f"/sessions/{session_id}"))

    def queries(self, session_id: str, limit: int = 1) -> dict:
        return _check(self.client.get(
            f"/sessions/{session_id}/queries", params={"limit": limit}
        ))

    def respond(self, session_id: str, response: dict) -> dict:
        return _check(self.client.post(f"/sessions/{session_id}/responses", json=response))

    def skip(self, session_id: str, query_id: str) -> dict:
        return _check(self.client.post(
            f"/sessions/{session_id}/skips", json={"query_id": query_id}
        ))

    def labels(self, session_id: str) -> dict:
        return _check(self.client.get(f"/sessions/{session_id}/labels"))

    def metrics(self, session_id: str) -> dict:
        return _check(self.client.get(f"/sessions/{session_id}/metrics"))


def drive_session(
    client: Union[httpx.Client, str],
    config: PipelineConfig,
    session_id: Optional[str] = None,
    batch: int = 1,
    max_steps: int = 100_000,
) -> dict:
    """Create a session, answer every query with the oracle, return the result.

    The oracle is rebuilt locally from the config's target world, exactly as
    the in-process path builds it. Responses that the service reports as stale
    (another client got there first, or a batch-mate auto-resolved the query)
    are dropped and the loop refetches.
    """
    if isinstance(client, str):
        client = httpx.Client(base_url=client)
    api = SessionClient(client)
    seq = target_sequence_of(config)
    oracle = OracleAnnotator(seq)

    created = api.create(config.to_dict(), session_id=session_id)
    sid = created["session_id"]
    answered = 0
    for _ in range(max_steps):
        page = api.queries(sid, limit=batch)
        if not page["queries"]:
            break
        for item in page["queries"]:
            query = AnnotationQuery.from_dict(item["query"])
            response = oracle.answer(query)
            try:
                api.respond(sid, response.to_dict())
                answered += 1
            except ServiceError as exc:
                if exc.status_code != 409:
                    raise
    else:
        raise ServiceError(0, {"error": {"code": "no-progress",
                                         "message": "session never completed"}})

    result = {
        "session_id": sid,
        "answered": answered,
        "status": api.status(sid),
        "labels": api.labels(sid),
    }
    status = result["status"]
    if status.get("gt_available"):
        result["metrics"] = api.metrics(sid)
    return result
