"""Graded-relevance NDCG@k."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import ScoredContext
from .errors import EmptyEvaluationError, InvalidInputError


@dataclass
class Qrels:
    """Relevance grades per query; unjudged pairs are grade 0."""

    judgments: dict = field(default_factory=dict)  # qid -> {doc_id: grade}

    def grades(self, query_id: str) -> dict[str, int]:
        return self.judgments.get(query_id, {})

    def query_ids(self) -> list[str]:
        return list(self.judgments)

    def __len__(self) -> int:
        return sum(len(v) for v in self.judgments.values())


@dataclass
class RankedRun:
    rankings: dict = field(default_factory=dict)  # qid -> [ScoredContext]
    tag: str = "hyqe"

    def doc_ids(self, query_id: str) -> list[str]:
        return [sc.context_id for sc in self.rankings.get(query_id, [])]

    @classmethod
    def from_lists(cls, lists: Mapping[str, Sequence[ScoredContext]], tag: str = "hyqe") -> "RankedRun":
        return cls({q: list(v) for q, v in lists.items()}, tag)


def gain(grade: int) -> float:
    return float(2 ** grade - 1)


def discount(position: int) -> float:
    """Discount for a 1-based position."""
    return math.log2(position + 1)


def dcg(grades_in_order: Sequence[int], k: int) -> float:
    return math.fsum(gain(g) / discount(i) for i, g in enumerate(grades_in_order[:k], start=1))


def ndcg_at_k(ranking: Sequence[str], grades: Mapping[str, int], k: int) -> float:
    """NDCG@k with 2^rel - 1 gains and log2(i + 1) discounts.

    The ideal DCG uses every judged document for the query, retrieved or
    not. Returns 0.0 when no judged document has a positive grade.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    ideal = dcg(sorted((g for g in grades.values() if g > 0), reverse=True), k)
    if ideal == 0:
        return 0.0
    actual = dcg([max(0, grades.get(doc, 0)) for doc in ranking], k)
    return actual / ideal


@dataclass
class EvalReport:
    k: int
    per_query: dict
    mean: float
    skipped: list = field(default_factory=list)
    missing: list = field(default_factory=list)

    def format(self, digits: int = 4) -> str:
        lines = [f"ndcg_cut_{self.k}\t{qid}\t{v:.{digits}f}" for qid, v in self.per_query.items()]
        lines.append(f"ndcg_cut_{self.k}\tall\t{self.mean:.{digits}f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"k": self.k, "mean": self.mean, "per_query": dict(self.per_query),
                "skipped": list(self.skipped), "missing": list(self.missing)}


def evaluate(run: RankedRun, qrels: Qrels, k: int = 10) -> EvalReport:
    """Macro-averaged NDCG@k over judged queries.

    Queries whose judgments are all zero are skipped. Judged queries missing
    from the run count as 0.
    """
    judged = [q for q, g in qrels.judgments.items() if any(v > 0 for v in g.values())]
    skipped = [q for q in qrels.judgments if q not in set(judged)]
    if not set(judged) & set(run.rankings):
        raise EmptyEvaluationError("run and qrels have no judged query ids in common")
    per_query, missing = {}, []
    for qid in judged:
        if qid not in run.rankings:
            missing.append(qid)
            per_query[qid] = 0.0
            continue
        per_query[qid] = ndcg_at_k(run.doc_ids(qid), qrels.grades(qid), k)
    mean = math.fsum(per_query.values()) / len(per_query)
    return EvalReport(k, per_query, mean, skipped, missing)
