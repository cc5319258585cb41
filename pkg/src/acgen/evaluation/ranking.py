"""Ranking metrics for retrieval with binary relevance."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from ..errors import EmptyRelevanceSet


@dataclass(frozen=True)
class RankingMetrics:
    k: int
    precision: float
    recall: float
    f1: float
    ndcg: float
    hit_rate: float
    map: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def _check(ranked: Sequence[str], relevant: Iterable[str], k: int) -> set[str]:
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(set(ranked)) != len(ranked):
        raise ValueError("ranked list contains duplicate ids")
    rel = set(relevant)
    if not rel:
        raise EmptyRelevanceSet("recall and nDCG are undefined without relevant items")
    return rel


def f1_score(precision: float, recall: float) -> float:
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def dcg(ranked: Sequence[str], relevant: set[str], k: int) -> float:
    return math.fsum(1.0 / math.log2(i + 1) for i, doc in enumerate(ranked[:k], start=1) if doc in relevant)


def ndcg_at_k(ranked: Sequence[str], relevant: Iterable[str], k: int) -> float:
    rel = _check(ranked, relevant, k)
    ideal = math.fsum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(rel)) + 1))
    return dcg(ranked, rel, k) / ideal


def average_precision(ranked: Sequence[str], relevant: Iterable[str]) -> float:
    """Mean of precision@r over the ranks r holding a relevant item."""
    rel = set(relevant)
    if not rel:
        raise EmptyRelevanceSet("average precision is undefined without relevant items")
    hits = 0
    precisions = []
    for r, doc in enumerate(ranked, start=1):
        if doc in rel:
            hits += 1
            precisions.append(hits / r)
    return math.fsum(precisions) / len(precisions) if precisions else 0.0


def ranking_metrics(ranked: Sequence[str], relevant: Iterable[str], k: int) -> RankingMetrics:
    rel = _check(ranked, relevant, k)
    found = sum(1 for doc in ranked[:k] if doc in rel)
    precision = found / k
    recall = found / len(rel)
    return RankingMetrics(
        k=k,
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        ndcg=ndcg_at_k(ranked, rel, k),
        hit_rate=1.0 if found else 0.0,
        map=average_precision(ranked, rel),
    )


def mean_average_precision(queries: Iterable[tuple[Sequence[str], Iterable[str]]]) -> float:
    aps = [average_precision(ranked, rel) for ranked, rel in queries]
    if not aps:
        raise ValueError("no queries")
    return math.fsum(aps) / len(aps)


def mean_metrics(per_query: Sequence[RankingMetrics]) -> RankingMetrics:
    """Average over queries at one k; ``map`` becomes MAP."""
    if not per_query:
        raise ValueError("no queries")
    ks = {m.k for m in per_query}
    if len(ks) != 1:
        raise ValueError("cannot average metrics computed at different k")
    n = len(per_query)

    def avg(name: str) -> float:
        return math.fsum(getattr(m, name) for m in per_query) / n

    return RankingMetrics(ks.pop(), avg("precision"), avg("recall"), avg("f1"), avg("ndcg"),
                          avg("hit_rate"), avg("map"))
