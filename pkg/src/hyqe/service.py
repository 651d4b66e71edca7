"""Minimal HTTP endpoint: ``POST /rerank``.

Request::

    {"query": "text", "query_id": "optional",
     "candidates": [{"id": "d1", "text": "...", "title": "optional", "baseline_score": 0.8}, ...]}

Response::

    {"query_id": "...", "results": [{"id", "rank", "score", "qc_term", "qh_term",
                                     "best_hypothetical_query", "fallback"}, ...],
     "incidents": [...]}
"""

from __future__ import annotations

import json
import logging
import math
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .config import Runtime
from .core import ContextDoc, Query
from .errors import HyQEError, InvalidInputError
from .pipeline import CandidateList, RankOutcome, rerank

logger = logging.getLogger(__name__)


class BadRequest(Exception):
    pass


def parse_request(payload) -> CandidateList:
    if not isinstance(payload, dict):
        raise BadRequest("body must be a JSON object")
    text = payload.get("query")
    if not isinstance(text, str) or not text.strip():
        raise BadRequest("'query' must be a non-empty string")
    cands = payload.get("candidates")
    if not isinstance(cands, list) or not cands:
        raise BadRequest("'candidates' must be a non-empty list")
    parsed = []
    for i, c in enumerate(cands):
        if not isinstance(c, dict):
            raise BadRequest(f"candidate {i} must be an object")
        cid, ctext, bs = c.get("id"), c.get("text"), c.get("baseline_score")
        if not isinstance(cid, str) or not isinstance(ctext, str):
            raise BadRequest(f"candidate {i} needs string 'id' and 'text'")
        if isinstance(bs, bool) or not isinstance(bs, (int, float)) or not math.isfinite(bs):
            raise BadRequest(f"candidate {i} needs a finite numeric 'baseline_score'")
        title = c.get("title")
        parsed.append((ContextDoc(cid, ctext, title if isinstance(title, str) else None), float(bs)))
    try:
        return CandidateList(Query(str(payload.get("query_id", "request")), text), parsed)
    except InvalidInputError as exc:
        raise BadRequest(str(exc)) from None


def outcome_to_json(outcome: RankOutcome) -> dict:
    results = []
    for it in outcome.items:
        bd = it.breakdown
        best = None
        if bd is not None and bd.best_hyp_index is not None:
            best = it.hypothetical_queries[bd.best_hyp_index]
        results.append({
            "id": it.context_id,
            "rank": it.rank,
            "score": it.score,
            "qc_term": None if bd is None else bd.qc_term,
            "qh_term": None if bd is None else bd.qh_term,
            "best_hypothetical_query": best,
            "fallback": it.fallback,
        })
    return {"query_id": outcome.query_id, "results": results, "incidents": list(outcome.incidents)}


def handle_rerank(rt: Runtime, payload) -> tuple[int, dict]:
    """Process one decoded request body; returns (HTTP status, JSON body)."""
    try:
        candidates = parse_request(payload)
    except BadRequest as exc:
        return 400, {"error": "bad_request", "message": str(exc)}
    try:
        outcome = rerank(candidates, rt.pipeline, rt.deps)
    except InvalidInputError as exc:
        return 400, {"error": "bad_request", "message": str(exc)}
    except HyQEError as exc:
        return 502, {"error": type(exc).__name__, "message": str(exc)}
    return 200, outcome_to_json(outcome)


def make_server(rt: Runtime, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        server_version = "hyqe"

        def _send(self, status: int, body: dict) -> None:
            data = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            if self.path.rstrip("/") != "/rerank":
                self._send(404, {"error": "not_found", "message": self.path})
                return
            length = int(self.headers.get("Content-Length") or 0)
            try:
                payload = json.loads(self.rfile.read(length) or b"null")
            except (ValueError, UnicodeDecodeError):
                self._send(400, {"error": "bad_request", "message": "body is not valid JSON"})
                return
            self._send(*handle_rerank(rt, payload))

        def log_message(self, fmt, *args):
            logger.info("%s - %s", self.address_string(), fmt % args)

    return ThreadingHTTPServer((host, port), Handler)
