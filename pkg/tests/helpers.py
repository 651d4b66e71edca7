"""Fixture builders shared by the test modules."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import yaml

from hyqe.cache import GenerationDeps, InMemoryQueryStore
from hyqe.core import ContextDoc, Query
from hyqe.genqueries import BUILTIN_TEMPLATES
from hyqe.pipeline import CandidateList, RankerDeps
from hyqe.providers import PLAIN_WRAPPER, GenerationParams, HashEmbedder, ScriptedGenerator, TableEmbedder

FIXTURES = Path(__file__).parent / "fixtures"

# Distractor fixture. Each query lives in its own 3-dim block of a 15-dim
# space: query = e0, a context with cosine a is a*e0 + sqrt(1-a^2)*e1 and a
# hypothetical query with cosine b is b*e0 + sqrt(1-b^2)*e2.
#   query -> [(doc_id, cos(q, c), [cos(q, h) ...], grade)]  in baseline order
DISTRACTOR = {
    "q1": [("q1-distractor", 0.9, [0.1], 0), ("q1-relevant", 0.7, [0.95], 1)],
    "q2": [("q2-d1", 0.9, [0.2], 0), ("q2-d2", 0.8, [0.25], 0), ("q2-relevant", 0.6, [0.99, 0.3], 2)],
    "q3": [("q3-relevant", 0.9, [0.9], 1), ("q3-distractor", 0.5, [0.2], 0)],
    "q4": [("q4-r1", 0.9, [0.5], 1), ("q4-distractor", 0.85, [0.1], 0), ("q4-r2", 0.6, [0.97], 2)],
    "q5": [("q5-distractor", 0.8, [0.05], 0), ("q5-relevant", 0.7, [], 1)],
}
DIM = 15


def _block_vec(block: int, cos: float, axis: int) -> list[float]:
    v = [0.0] * DIM
    v[3 * block] = cos
    v[3 * block + axis] = math.sqrt(1.0 - cos * cos)
    return v


def write_distractor_fixture(root: Path, *, lam: float = 1.0) -> dict:
    root.mkdir(parents=True, exist_ok=True)
    table: dict[str, list[float]] = {}
    by_passage: dict[str, str] = {}
    corpus, queries, qrels, run = [], [], [], []
    for b, (qid, docs) in enumerate(DISTRACTOR.items()):
        qtext = f"question {qid}"
        table[qtext] = [1.0 if i == 3 * b else 0.0 for i in range(DIM)]
        queries.append({"_id": qid, "text": qtext})
        for r, (doc, a, hyps, grade) in enumerate(docs, start=1):
            ctext = f"passage {doc}"
            table[ctext] = _block_vec(b, a, 1)
            corpus.append({"_id": doc, "title": "", "text": ctext})
            htexts = [f"hypothetical {doc} {j}" for j in range(len(hyps))]
            for ht, hb in zip(htexts, hyps):
                table[ht] = _block_vec(b, hb, 2)
            by_passage[ctext] = "\n".join(f"{j + 1}. {t}" for j, t in enumerate(htexts)) or "No Content"
            run.append(f"{qid} Q0 {doc} {r} {a!r} baseline")
            qrels.append(f"{qid} 0 {doc} {grade}")

    def jsonl(name, rows):
        (root / name).write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")

    jsonl("corpus.jsonl", corpus)
    jsonl("queries.jsonl", queries)
    (root / "qrels.txt").write_text("\n".join(qrels) + "\n", encoding="utf-8")
    (root / "baseline.run").write_text("\n".join(run) + "\n", encoding="utf-8")
    (root / "table.json").write_text(json.dumps(table), encoding="utf-8")
    (root / "script.json").write_text(json.dumps({"by_passage": by_passage}), encoding="utf-8")
    config = {
        "concurrency": 2,
        "generator": {"kind": "scripted", "script": "script.json", "wrapper": "plain"},
        "embedder": {"kind": "table", "table": "table.json", "dim": DIM},
        "pipeline": {"k": 30, "retrieval_depth": 100},
        "score": {"lambda": lam, "aggregation": "max", "qc_mode": "cosine", "qh_mode": "cosine"},
    }
    (root / "config.yaml").write_text(yaml.safe_dump(config), encoding="utf-8")
    return {name: root / name for name in
            ("corpus.jsonl", "queries.jsonl", "qrels.txt", "baseline.run", "config.yaml")}


def write_small_corpus_fixture(root: Path, n_docs: int = 10, n_queries: int = 20, dim: int = 16) -> dict:
    """10 docs, 20 queries, hash embeddings, scripted generator."""
    root.mkdir(parents=True, exist_ok=True)
    emb = HashEmbedder(dim, seed=11)
    docs = [(f"d{i}", f"Document {i} talks about topic {i} in some detail. It has a second sentence.")
            for i in range(n_docs)]
    by_passage = {}
    for i, (_, text) in enumerate(docs):
        if i == 3:
            by_passage[text] = "No Content"
        else:
            by_passage[text] = "\n".join(f"- What is topic {i} aspect {j}?" for j in range(1 + i % 4))
    queries = [(f"q{j}", f"tell me about topic {j % n_docs} variant {j}") for j in range(n_queries)]
    qrels, run = [], []
    for qid, qtext in queries:
        qv = emb.vector(qtext)
        sims = []
        for did, dtext in docs:
            dv = emb.vector(dtext)
            sims.append((float(qv @ dv / (np.linalg.norm(qv) * np.linalg.norm(dv))), did))
        sims.sort(key=lambda t: (-t[0], t[1]))
        for r, (s, did) in enumerate(sims, start=1):
            run.append(f"{qid} Q0 {did} {r} {s!r} baseline")
        target = f"d{int(qid[1:]) % n_docs}"
        qrels.append(f"{qid} 0 {target} 1")
    (root / "corpus.jsonl").write_text(
        "".join(json.dumps({"_id": d, "text": t}) + "\n" for d, t in docs), encoding="utf-8")
    (root / "queries.jsonl").write_text(
        "".join(json.dumps({"_id": q, "text": t}) + "\n" for q, t in queries), encoding="utf-8")
    (root / "qrels.txt").write_text("\n".join(qrels) + "\n", encoding="utf-8")
    (root / "baseline.run").write_text("\n".join(run) + "\n", encoding="utf-8")
    (root / "script.json").write_text(json.dumps({"by_passage": by_passage}), encoding="utf-8")
    config = {
        "concurrency": 4,
        "generator": {"kind": "scripted", "script": "script.json", "wrapper": "plain"},
        "embedder": {"kind": "hash", "dim": dim, "seed": 11},
        "pipeline": {"k": 5, "retrieval_depth": 10},
        "score": {"lambda": 0.5},
    }
    (root / "config.yaml").write_text(yaml.safe_dump(config), encoding="utf-8")
    return {name: root / name for name in
            ("corpus.jsonl", "queries.jsonl", "qrels.txt", "baseline.run", "config.yaml")}


def random_instance(rng: np.random.Generator, *, n_cands: int | None = None, max_hyps: int = 20,
                    dim: int | None = None):
    """A random query, candidate list and matching in-memory providers.

    Candidates are in baseline cosine order. Returns (candidates, deps, meta).
    """
    dim = dim or int(rng.integers(2, 12))
    n = n_cands or int(rng.integers(1, 25))
    sizes = rng.integers(0, max_hyps + 1, size=n)
    vecs = rng.standard_normal((1 + n + int(sizes.sum()), dim))
    q = vecs[0]
    ctx_vecs = vecs[1:n + 1]
    table = {"the query": q}
    by_passage = {}
    docs = []
    row = n + 1
    for i in range(n):
        text = f"ctx {i}"
        table[text] = ctx_vecs[i]
        hyps = [f"hyp {i} {j}" for j in range(sizes[i])]
        for h in hyps:
            table[h] = vecs[row]
            row += 1
        by_passage[text] = "\n".join(hyps) if hyps else "No Content"
        docs.append(ContextDoc(f"c{i}", text))
    cos = [float(q @ v / (np.linalg.norm(q) * np.linalg.norm(v))) for v in ctx_vecs]
    order = sorted(range(n), key=lambda i: -cos[i])
    cands = CandidateList(Query("q", "the query"), [(docs[i], cos[i]) for i in order])
    deps = make_deps(table, by_passage)
    return cands, deps, {"cos": cos, "order": [docs[i].id for i in order], "table": table,
                         "by_passage": by_passage}


def make_deps(table, by_passage, *, store=None, concurrency: int = 1, generator=None) -> RankerDeps:
    gen = generator or ScriptedGenerator(by_passage=by_passage)
    emb = TableEmbedder(table)
    generation = GenerationDeps(gen, emb, BUILTIN_TEMPLATES["default"], GenerationParams(), PLAIN_WRAPPER)
    return RankerDeps(generation, store or InMemoryQueryStore(), concurrency=concurrency)


def brute_force_ndcg(ranking, grades, k):
    """Reference NDCG: ideal DCG is the best DCG over every ordering of the judged docs."""
    import itertools

    def direct(docs):
        total = 0.0
        for pos in range(min(k, len(docs))):
            g = grades.get(docs[pos], 0)
            total += (2.0 ** g - 1.0) / (math.log(pos + 2) / math.log(2))
        return total

    judged = list(grades)
    best = max(direct(list(p)) for p in itertools.permutations(judged)) if judged else 0.0
    return 0.0 if best <= 0 else direct(list(ranking)) / best
