"""Readers and writers for BEIR-style JSONL and TREC qrels/run files."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterator

from .core import ContextDoc, Query, ScoredContext
from .errors import DuplicateIdError, InvalidInputError, ParseError
from .evaluation import Qrels, RankedRun

logger = logging.getLogger(__name__)


def _lines(path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if line.strip():
                yield no, line


def _json_line(line: str, no: int, path) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", no, str(path)) from None
    if not isinstance(obj, dict):
        raise ParseError("expected a JSON object", no, str(path))
    return obj


def load_corpus(path) -> dict[str, ContextDoc]:
    """``{"_id", "title"?, "text"}`` per line."""
    corpus: dict[str, ContextDoc] = {}
    for no, line in _lines(path):
        obj = _json_line(line, no, path)
        if "_id" not in obj or not isinstance(obj.get("text", ""), str):
            raise ParseError("corpus record needs '_id' and string 'text'", no, str(path))
        doc_id = str(obj["_id"])
        if doc_id in corpus:
            raise DuplicateIdError(f"duplicate corpus id {doc_id!r}", no, str(path))
        title = obj.get("title") or None
        corpus[doc_id] = ContextDoc(doc_id, obj.get("text", ""), title)
    return corpus


def load_queries(path) -> dict[str, Query]:
    queries: dict[str, Query] = {}
    for no, line in _lines(path):
        obj = _json_line(line, no, path)
        if "_id" not in obj or not isinstance(obj.get("text"), str):
            raise ParseError("query record needs '_id' and 'text'", no, str(path))
        qid = str(obj["_id"])
        if qid in queries:
            raise DuplicateIdError(f"duplicate query id {qid!r}", no, str(path))
        try:
            queries[qid] = Query(qid, obj["text"])
        except InvalidInputError as exc:
            raise ParseError(str(exc), no, str(path)) from None
    return queries


def load_qrels(path) -> Qrels:
    """TREC ``qid iter docid grade`` or BEIR TSV ``query-id corpus-id score``.

    Negative grades (some argument-retrieval sets use them) are read as 0.
    """
    judgments: dict[str, dict[str, int]] = {}
    first = True
    for no, line in _lines(path):
        parts = line.split()
        if first and parts[:2] == ["query-id", "corpus-id"]:
            first = False
            continue
        first = False
        if len(parts) == 4:
            qid, _, doc, grade = parts
        elif len(parts) == 3:
            qid, doc, grade = parts
        else:
            raise ParseError(f"expected 3 or 4 fields, got {len(parts)}", no, str(path))
        try:
            g = int(grade)
        except ValueError:
            raise ParseError(f"grade {grade!r} is not an integer", no, str(path)) from None
        if g < 0:
            logger.warning("%s:%d: negative grade %d read as 0", path, no, g)
            g = 0
        per_q = judgments.setdefault(qid, {})
        if doc in per_q:
            raise DuplicateIdError(f"duplicate judgment for ({qid}, {doc})", no, str(path))
        per_q[doc] = g
    return Qrels(judgments)


def write_qrels(qrels: Qrels, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid, docs in qrels.judgments.items():
            for doc, g in docs.items():
                fh.write(f"{qid} 0 {doc} {g}\n")


def read_run(path) -> RankedRun:
    """Read a six-column TREC run.

    Entries are ordered by their rank column and renumbered 1..n per query.
    """
    rows: dict[str, list[tuple[int, int, str, float]]] = {}
    seen: dict[str, set] = {}
    tag = None
    for no, line in _lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise ParseError(f"expected 6 fields, got {len(parts)}", no, str(path))
        qid, _q0, doc, rank_s, score_s, run_tag = parts
        try:
            r = int(rank_s)
            s = float(score_s)
        except ValueError:
            raise ParseError(f"bad rank/score {rank_s!r} {score_s!r}", no, str(path)) from None
        if doc in seen.setdefault(qid, set()):
            raise DuplicateIdError(f"doc {doc!r} appears twice for query {qid!r}", no, str(path))
        seen[qid].add(doc)
        rows.setdefault(qid, []).append((r, no, doc, s))
        if tag is None:
            tag = run_tag
    rankings = {
        qid: [ScoredContext(doc, s, i) for i, (_, _, doc, s) in enumerate(sorted(entries), start=1)]
        for qid, entries in rows.items()
    }
    return RankedRun(rankings, tag or "run")


def format_run_line(qid: str, sc: ScoredContext, tag: str) -> str:
    # repr() keeps the float exact so reading it back is lossless.
    return f"{qid} Q0 {sc.context_id} {sc.rank} {float(sc.score)!r} {tag}"


def write_run(run: RankedRun, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for qid, ranking in run.rankings.items():
            for sc in ranking:
                fh.write(format_run_line(qid, sc, run.tag) + "\n")
