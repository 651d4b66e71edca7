"""Re-rank a query's top-K candidates with cached hypothetical queries."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .cache import CacheKey, GenerationDeps, QueryStore
from .core import Embedding, Query, ScoredContext, SimilarityMode, similarity
from .errors import HyQEError, InvalidInputError, ProviderError
from .genqueries import context_text
from .providers import (
    PLAIN_WRAPPER,
    DEFAULT_CONCURRENCY,
    Embedder,
    GenerationParams,
    Generator,
    PromptWrapper,
)
from .scoring import ScoreBreakdown, ScoreConfig, downsample, mixed_seed, score

logger = logging.getLogger(__name__)

# Our own wording; used for the "times" HyDE composition.
HYDE_TEMPLATE_ID = "hyde-default"
HYDE_TEMPLATE = "Write a short passage that answers the question: {query}"


class HydeMode(str, enum.Enum):
    OFF = "off"
    PLUS = "plus"
    TIMES = "times"


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 30
    retrieval_depth: int = 100
    score: ScoreConfig = field(default_factory=ScoreConfig)
    template_id: str = "default"
    hyde: HydeMode = HydeMode.OFF
    hyde_n_contexts: int = 4
    # Abort on a provider failure instead of falling back to sim(q, c).
    strict: bool = False
    # Re-order the candidates by query-context cosine before taking the head.
    prerank: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hyde", HydeMode(self.hyde))
        if self.k < 1 or self.retrieval_depth < 1:
            raise InvalidInputError("k and retrieval_depth must be positive")
        if self.k > self.retrieval_depth:
            raise InvalidInputError(f"k={self.k} exceeds retrieval_depth={self.retrieval_depth}")
        if self.hyde_n_contexts < 1:
            raise InvalidInputError("hyde_n_contexts must be >= 1")


@dataclass
class CandidateList:
    query: Query
    candidates: list  # [(ContextDoc, baseline_score)]

    def __post_init__(self):
        ids = [c.id for c, _ in self.candidates]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate candidate ids for query {self.query.id!r}")
        scores = [s for _, s in self.candidates]
        if any(b > a for a, b in zip(scores, scores[1:])):
            raise InvalidInputError(f"baseline scores for query {self.query.id!r} are not non-increasing")


@dataclass
class RankerDeps:
    generation: GenerationDeps
    store: QueryStore
    hyde_generator: Optional[Generator] = None
    hyde_params: GenerationParams = field(default_factory=GenerationParams)
    hyde_wrapper: PromptWrapper = PLAIN_WRAPPER
    concurrency: int = DEFAULT_CONCURRENCY

    @property
    def embedder(self) -> Embedder:
        return self.generation.embedder


@dataclass(frozen=True)
class RankedContext:
    context_id: str
    rank: int
    score: float
    baseline_rank: int
    breakdown: Optional[ScoreBreakdown] = None
    hypothetical_queries: tuple = ()
    fallback: bool = False


@dataclass
class RankOutcome:
    query_id: str
    items: list
    incidents: list = field(default_factory=list)

    @property
    def ranking(self) -> list[ScoredContext]:
        return [ScoredContext(it.context_id, it.score, it.rank) for it in self.items]


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


def _prerank(cands, q_emb: Embedding, embedder: Embedder):
    texts = [context_text(c) for c, _ in cands]
    embs = embedder.embed(texts)
    sims = [similarity(q_emb, e, SimilarityMode.COSINE) for e in embs]
    order = sorted(range(len(cands)), key=lambda i: (-sims[i], i))
    return [(cands[i][0], sims[i]) for i in order], [embs[i] for i in order]


def rank_detailed(candidates: CandidateList, cfg: PipelineConfig, deps: RankerDeps, *,
                  query_embedding: Embedding | None = None) -> RankOutcome:
    """Full re-ranking with per-context score breakdowns and incidents."""
    if not candidates.candidates:
        raise InvalidInputError(f"no candidates for query {candidates.query.id!r}")
    embedder = deps.embedder
    q_emb = query_embedding if query_embedding is not None else embedder.embed([candidates.query.text])[0]

    cands = list(candidates.candidates)
    head_embs: list[Optional[Embedding]] | None = None
    if cfg.prerank:
        cands, all_embs = _prerank(cands, q_emb, embedder)
        head_embs = all_embs[:cfg.k]
    head, tail = cands[:cfg.k], cands[cfg.k:]
    incidents: list[str] = []

    if head_embs is None:
        head_embs = [None] * len(head)
        idx = [i for i, (c, _) in enumerate(head) if context_text(c).strip()]
        try:
            embs = embedder.embed([context_text(head[i][0]) for i in idx]) if idx else []
        except ProviderError as exc:
            if cfg.strict:
                raise
            incidents.append(f"context embedding failed: {exc}")
            embs = [None] * len(idx)
        for i, e in zip(idx, embs):
            head_embs[i] = e

    fingerprint = deps.generation.fingerprint()
    sc = cfg.score

    def score_one(i: int):
        ctx, baseline = head[i]
        c_emb = head_embs[i]
        if c_emb is None:
            return RankedContext(ctx.id, 0, baseline, i + 1, fallback=True), f"{ctx.id}: no context embedding"
        try:
            rec = deps.store.get_or_generate(CacheKey(ctx.id, fingerprint), ctx, deps.generation)
        except HyQEError as exc:
            if cfg.strict:
                raise
            qc = similarity(q_emb, c_emb, sc.qc_mode)
            bd = ScoreBreakdown(total=qc, qc_term=qc, qh_term=0.0)
            return RankedContext(ctx.id, 0, qc, i + 1, bd, fallback=True), f"{ctx.id}: {type(exc).__name__}: {exc}"
        hyps = rec.as_query_set()
        if sc.downsample_ratio is not None:
            hyps = downsample(hyps, sc.downsample_ratio, mixed_seed(sc.downsample_seed, ctx.id))
        bd = score(q_emb, c_emb, hyps.embeddings or [], sc)
        return RankedContext(ctx.id, 0, bd.total, i + 1, bd, tuple(hyps.queries)), None

    scored = _map(score_one, list(range(len(head))), deps.concurrency)
    for _, incident in scored:
        if incident:
            logger.warning("query %s: %s", candidates.query.id, incident)
            incidents.append(incident)

    ordered = sorted((item for item, _ in scored), key=lambda it: (-it.score, it.baseline_rank, it.context_id))
    items = [replace(it, rank=r) for r, it in enumerate(ordered, start=1)]
    # Tail keeps baseline order; scores are shifted below the head so that
    # score order and rank order agree in the emitted run.
    floor = items[-1].score if items else 0.0
    for j, (ctx, _) in enumerate(tail, start=1):
        items.append(RankedContext(ctx.id, len(items) + 1, floor - j, cfg.k + j))
    return RankOutcome(candidates.query.id, items, incidents)


def rank(candidates: CandidateList, cfg: PipelineConfig, deps: RankerDeps, *,
         query_embedding: Embedding | None = None) -> list[ScoredContext]:
    """Re-rank the first ``cfg.k`` candidates; the rest keep baseline order."""
    return rank_detailed(candidates, cfg, deps, query_embedding=query_embedding).ranking


def hyde_prompt(query: Query) -> str:
    return HYDE_TEMPLATE.replace("{query}", query.text)


def hyde_query_embedding(query: Query, generator: Generator, embedder: Embedder, n: int, *,
                         params: GenerationParams | None = None,
                         wrapper: PromptWrapper = PLAIN_WRAPPER) -> Embedding:
    """Mean of the query embedding and ``n`` generated passage embeddings."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    params = params or GenerationParams()
    prompt = hyde_prompt(query)
    passages = []
    for _ in range(n):
        text = generator.generate(prompt, params, wrapper).strip()
        if text:
            passages.append(text)
        else:
            logger.warning("empty hypothetical passage for query %s", query.id)
    vecs = embedder.embed([query.text] + passages)
    return Embedding(np.mean(np.stack([v.values for v in vecs]), axis=0))


def compose_hyde(candidates: CandidateList, cfg: PipelineConfig, deps: RankerDeps) -> RankOutcome:
    """Apply one of the HyDE compositions.

    ``plus`` only changes how candidates were retrieved, so ranking is plain.
    ``times`` swaps the query embedding for the HyDE average in both terms.
    """
    if cfg.hyde is HydeMode.OFF:
        raise InvalidInputError("compose_hyde needs hyde mode 'plus' or 'times'")
    if cfg.hyde is HydeMode.PLUS:
        return rank_detailed(candidates, cfg, deps)
    generator = deps.hyde_generator or deps.generation.generator
    q_emb = hyde_query_embedding(candidates.query, generator, deps.embedder, cfg.hyde_n_contexts,
                                 params=deps.hyde_params, wrapper=deps.hyde_wrapper)
    return rank_detailed(candidates, cfg, deps, query_embedding=q_emb)


def rerank(candidates: CandidateList, cfg: PipelineConfig, deps: RankerDeps) -> RankOutcome:
    """Entry point shared by the batch commands and the service."""
    if cfg.hyde is HydeMode.OFF:
        return rank_detailed(candidates, cfg, deps)
    return compose_hyde(candidates, cfg, deps)
