"""Batch commands. Each returns a :class:`RunManifest` plus its result."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cache import CacheKey
from .config import Runtime
from .core import ContextDoc
from .errors import HyQEError, ParseError
from .evaluation import EvalReport, Qrels, RankedRun, evaluate
from .formats import load_corpus, load_qrels, load_queries, read_run, write_run
from .genqueries import context_text
from .pipeline import CandidateList, PipelineConfig, RankOutcome, rerank

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    provider_calls: dict = field(default_factory=dict)
    cache: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)

    def finish(self, rt: Runtime) -> "RunManifest":
        self.provider_calls = rt.provider_counts()
        self.cache = rt.store.stats()
        return self


def _new_manifest(command: str, rt: Runtime, **inputs) -> RunManifest:
    return RunManifest(command, config=rt.settings.snapshot(),
                       inputs={k: str(v) for k, v in inputs.items() if v is not None})


def _pmap(fn, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------

def cmd_pregen(rt: Runtime, corpus_path, *, corpus: dict | None = None) -> RunManifest:
    """Generate and cache H(c) for every corpus context.

    Failures are collected rather than aborting; records already written
    stay, so rerunning resumes where the last run stopped.
    """
    m = _new_manifest("pregen", rt, corpus=corpus_path, cache=rt.store.root)
    with m.stage("load"):
        docs = list((corpus if corpus is not None else load_corpus(corpus_path)).values())
    gen_deps = rt.deps.generation
    fingerprint = gen_deps.fingerprint()
    failures: dict[str, str] = {}

    def one(doc: ContextDoc):
        try:
            rt.store.get_or_generate(CacheKey(doc.id, fingerprint), doc, gen_deps)
        except HyQEError as exc:
            failures[doc.id] = f"{type(exc).__name__}: {exc}"

    with m.stage("generate"):
        _pmap(one, docs, rt.deps.concurrency)
    m.notes = {"contexts": len(docs), "failed": dict(sorted(failures.items())),
               "fingerprint": fingerprint.to_dict()}
    return m.finish(rt)


def build_candidate_lists(corpus: dict, queries: dict, baseline: RankedRun, depth: int) -> list[CandidateList]:
    lists = []
    for qid, ranking in baseline.rankings.items():
        if qid not in queries:
            raise ParseError(f"baseline run names unknown query id {qid!r}")
        cands = []
        for sc in ranking[:depth]:
            if sc.context_id not in corpus:
                raise ParseError(f"baseline run names unknown doc id {sc.context_id!r} (query {qid})")
            cands.append((corpus[sc.context_id], sc.score))
        lists.append(CandidateList(queries[qid], cands))
    return lists


@dataclass
class RankInputs:
    corpus: dict
    queries: dict
    baseline: RankedRun

    @classmethod
    def load(cls, corpus_path, queries_path, run_path) -> "RankInputs":
        return cls(load_corpus(corpus_path), load_queries(queries_path), read_run(run_path))


def rank_all(rt: Runtime, inputs: RankInputs, cfg: PipelineConfig) -> tuple[RankedRun, list[RankOutcome]]:
    lists = build_candidate_lists(inputs.corpus, inputs.queries, inputs.baseline, cfg.retrieval_depth)
    outcomes = _pmap(lambda cl: rerank(cl, cfg, rt.deps), lists, rt.deps.concurrency)
    run = RankedRun({o.query_id: o.ranking for o in outcomes}, tag=_run_tag(cfg))
    return run, outcomes


def _run_tag(cfg: PipelineConfig) -> str:
    return f"hyqe-{cfg.score.aggregation.value}-l{cfg.score.lam:g}"


def cmd_rank(rt: Runtime, inputs: RankInputs, out_run, *, cfg: PipelineConfig | None = None,
             input_paths: dict | None = None) -> tuple[RunManifest, RankedRun]:
    cfg = cfg or rt.pipeline
    m = _new_manifest("rank", rt, **(input_paths or {}))
    with m.stage("rank"):
        run, outcomes = rank_all(rt, inputs, cfg)
    with m.stage("write"):
        write_run(run, out_run)
    m.outputs = {"run": str(out_run)}
    incidents = {o.query_id: o.incidents for o in outcomes if o.incidents}
    m.notes = {"queries": len(outcomes), "incidents": incidents}
    return m.finish(rt), run


def cmd_eval(run_path, qrels_path, k: int = 10) -> EvalReport:
    return evaluate(read_run(run_path), load_qrels(qrels_path), k)


def cmd_sweep(rt: Runtime, inputs: RankInputs, qrels: Qrels, lambdas: Iterable[float], *,
              k_eval: int = 10, input_paths: dict | None = None) -> tuple[RunManifest, list[dict]]:
    """Mean NDCG@k for each lambda, all sharing one cache."""
    m = _new_manifest("sweep", rt, **(input_paths or {}))
    rows = []
    with m.stage("sweep"):
        for lam in lambdas:
            cfg = replace(rt.pipeline, score=rt.pipeline.score.with_lambda(float(lam)))
            run, _ = rank_all(rt, inputs, cfg)
            rows.append({"lambda": float(lam), f"ndcg@{k_eval}": evaluate(run, qrels, k_eval).mean})
    m.notes = {"rows": rows}
    return m.finish(rt), rows


def cmd_downsample(rt: Runtime, inputs: RankInputs, qrels: Qrels, ratios: Iterable[float], *,
                   trials: int = 5, seed: int = 0, k_eval: int = 10,
                   input_paths: dict | None = None) -> tuple[RunManifest, list[dict]]:
    """Average NDCG@k over ``trials`` seeds for each downsampling ratio."""
    m = _new_manifest("downsample", rt, **(input_paths or {}))
    rows = []
    with m.stage("downsample"):
        for ratio in ratios:
            vals = []
            for t in range(trials):
                sc = replace(rt.pipeline.score, downsample_ratio=float(ratio), downsample_seed=seed + t)
                run, _ = rank_all(rt, inputs, replace(rt.pipeline, score=sc))
                vals.append(evaluate(run, qrels, k_eval).mean)
            rows.append({"ratio": float(ratio), "trials": trials,
                         f"ndcg@{k_eval}": math.fsum(vals) / len(vals),
                         "std": float(np.std(vals))})
    m.notes = {"rows": rows}
    return m.finish(rt), rows


def cmd_export_embeddings(rt: Runtime, inputs: RankInputs, out_path, *,
                          input_paths: dict | None = None) -> RunManifest:
    """Write query, head-context and hypothetical-query vectors to an ``.npz`` file.

    Arrays: ``vectors`` (n x dim), ``roles``, ``query_ids``, ``item_ids``, ``texts``.
    """
    m = _new_manifest("export-embeddings", rt, **(input_paths or {}))
    cfg = rt.pipeline
    lists = build_candidate_lists(inputs.corpus, inputs.queries, inputs.baseline, cfg.retrieval_depth)
    gen_deps = rt.deps.generation
    fp = gen_deps.fingerprint()
    vectors, roles, qids, items, texts = [], [], [], [], []

    def add(vec, role, qid, item, text):
        vectors.append(vec.values)
        roles.append(role)
        qids.append(qid)
        items.append(item)
        texts.append(text)

    with m.stage("export"):
        for cl in lists:
            q = cl.query
            add(rt.embedder.embed([q.text])[0], "query", q.id, q.id, q.text)
            head = [c for c, _ in cl.candidates[:cfg.k]]
            for ctx in head:
                text = context_text(ctx)
                if not text.strip():
                    continue
                add(rt.embedder.embed([text])[0], "context", q.id, ctx.id, text)
                rec = rt.store.get_or_generate(CacheKey(ctx.id, fp), ctx, gen_deps)
                for i, (hq, he) in enumerate(zip(rec.queries, rec.embeddings)):
                    add(he, "hypothetical_query", q.id, f"{ctx.id}#{i}", hq)
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        np.savez(out_path, vectors=np.stack(vectors) if vectors else np.zeros((0, 0)),
                 roles=np.array(roles), query_ids=np.array(qids), item_ids=np.array(items),
                 texts=np.array(texts))
    m.outputs = {"embeddings": str(out_path)}
    m.notes = {"rows": len(vectors)}
    return m.finish(rt)
