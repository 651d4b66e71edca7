"""Context scores that mix query-context and query-hypothetical-query similarity.

    total = sim(q, c) + lambda * agg_{h in H(c)} sim(q, h)

with ``agg`` either ``max`` (the main variant) or ``mean`` (a lower bound of
the same quantity). An empty H(c) contributes nothing.
"""

from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import Embedding, SimilarityMode, similarity
from .errors import DimensionError, InvalidInputError, ZeroNormError
from .genqueries import HypotheticalQuerySet


class Aggregation(str, enum.Enum):
    MAX = "max"
    MEAN = "mean"


# Per-embedder lambda used for the reported results.
DEFAULT_LAMBDAS = {
    "contriever": 2.0,
    "bge-base-en-v1.5": 0.03,
    "e5-large-v2": 0.5,
    "nomic-embed-text-v1.5": 0.5,
    "text-embedding-3-large": 0.3,
}
FALLBACK_LAMBDA = 0.5


@dataclass(frozen=True)
class ScoreConfig:
    lam: float = 1.0
    aggregation: Aggregation = Aggregation.MAX
    qc_mode: SimilarityMode = SimilarityMode.COSINE
    qh_mode: SimilarityMode = SimilarityMode.COSINE
    downsample_ratio: Optional[float] = None
    downsample_seed: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))
        object.__setattr__(self, "qc_mode", SimilarityMode(self.qc_mode))
        object.__setattr__(self, "qh_mode", SimilarityMode(self.qh_mode))
        if not math.isfinite(self.lam) or self.lam < 0:
            raise InvalidInputError(f"lambda must be finite and >= 0, got {self.lam}")
        if self.downsample_ratio is not None:
            if not 0 < self.downsample_ratio <= 1:
                raise InvalidInputError("downsample ratio must be in (0, 1]")
            if self.downsample_seed is None:
                raise InvalidInputError("downsampling needs a seed")

    def with_lambda(self, lam: float) -> "ScoreConfig":
        return replace(self, lam=lam)

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "aggregation": self.aggregation.value,
            "qc_mode": self.qc_mode.value,
            "qh_mode": self.qh_mode.value,
            "downsample": {"ratio": self.downsample_ratio, "seed": self.downsample_seed},
        }

    @classmethod
    def from_dict(cls, d: dict, base: "ScoreConfig | None" = None) -> "ScoreConfig":
        base = base or cls()
        ds = d.get("downsample") or {}
        return cls(
            lam=float(d.get("lambda", base.lam)),
            aggregation=d.get("aggregation", base.aggregation),
            qc_mode=d.get("qc_mode", base.qc_mode),
            qh_mode=d.get("qh_mode", base.qh_mode),
            downsample_ratio=ds.get("ratio", base.downsample_ratio),
            downsample_seed=ds.get("seed", base.downsample_seed),
        )


def default_score_config(embedding_model: str | None) -> ScoreConfig:
    """Defaults for a named embedding model.

    bge-base-en-v1.5 keeps the query/hypothetical-query term as a raw inner
    product, which is why its lambda is so much smaller.
    """
    name = (embedding_model or "").lower().rsplit("/", 1)[-1]
    lam = DEFAULT_LAMBDAS.get(name, FALLBACK_LAMBDA)
    qh_mode = SimilarityMode.INNER_PRODUCT if name == "bge-base-en-v1.5" else SimilarityMode.COSINE
    return ScoreConfig(lam=lam, qh_mode=qh_mode)


@dataclass(frozen=True)
class ScoreBreakdown:
    total: float
    qc_term: float
    qh_term: float
    best_hyp_index: Optional[int] = None


def _similarities(q: np.ndarray, hyps: Sequence[Embedding], mode: SimilarityMode) -> list[float]:
    for h in hyps:
        if h.values.shape != q.shape:
            raise DimensionError(f"hypothetical query has dim {h.dim}, query has {q.shape[0]}")
    mat = np.stack([h.values for h in hyps])
    dots = mat @ q
    if mode is SimilarityMode.INNER_PRODUCT:
        return dots.tolist()
    norms = np.sqrt(np.einsum("ij,ij->i", mat, mat))
    qn = math.sqrt(float(q @ q))
    if qn == 0.0 or not norms.all():
        raise ZeroNormError("cosine similarity is undefined for a zero vector")
    return (dots / (norms * qn)).tolist()


def score(q_emb: Embedding, c_emb: Embedding, hyp_embs: Sequence[Embedding], cfg: ScoreConfig) -> ScoreBreakdown:
    """Score one context for one query."""
    qc = similarity(q_emb, c_emb, cfg.qc_mode)
    if not hyp_embs:
        return ScoreBreakdown(total=qc, qc_term=qc, qh_term=0.0)
    sims = _similarities(q_emb.values, hyp_embs, cfg.qh_mode)
    best = None
    if cfg.aggregation is Aggregation.MAX:
        best = max(range(len(sims)), key=sims.__getitem__)
        qh = sims[best]
    else:
        qh = math.fsum(sims) / len(sims)
    return ScoreBreakdown(total=qc + cfg.lam * qh, qc_term=qc, qh_term=qh, best_hyp_index=best)


def mixed_seed(seed: int, context_id: str) -> int:
    """Per-context seed that does not depend on Python's randomized hash()."""
    digest = hashlib.sha256(f"{seed}\x00{context_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def downsample(hyps: HypotheticalQuerySet, ratio: float, seed: int) -> HypotheticalQuerySet:
    """Keep a seeded uniform sample of ceil(ratio * n) queries without replacement.

    Kept queries stay in their original order, with embeddings aligned.
    """
    if not 0 < ratio <= 1:
        raise InvalidInputError("ratio must be in (0, 1]")
    n = len(hyps.queries)
    if ratio == 1 or n == 0:
        return hyps
    # round() first so 0.7 * 10 = 7.000000000000001 still keeps 7
    keep = math.ceil(round(ratio * n, 9))
    rng = np.random.default_rng(seed)
    idx = sorted(int(i) for i in rng.choice(n, size=keep, replace=False))
    embeddings = None if hyps.embeddings is None else [hyps.embeddings[i] for i in idx]
    return HypotheticalQuerySet(hyps.context_id, hyps.fingerprint,
                                [hyps.queries[i] for i in idx], embeddings)
