"""Ranking, MRR@K, probability ensembling, and the popularity baseline.

Ordering is byte-reproducible: descending probability, then candidate
source priority (co-visitation candidates before fills), then ascending
ItemId.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Mapping, Optional, Sequence

from .candgen import CandidateSource
from .corpus import ItemId
from .covis import ItemStats

__all__ = [
    "RankedList",
    "EvalReport",
    "rank",
    "mrr_at_k",
    "ensemble",
    "popularity_ranking",
]

_SOURCE_PRIORITY = {
    CandidateSource.COVIS: 0,
    CandidateSource.ITEM2VEC_FILL: 1,
    CandidateSource.TEXT_FILL: 2,
}


@dataclass
class RankedList:
    session_id: int
    items: list[ItemId] = field(default_factory=list)


@dataclass
class EvalReport:
    mrr: float
    n_sessions: int
    hit_rate_at_k: float
    per_locale: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "mrr": self.mrr,
                "hit_rate": self.hit_rate_at_k,
                "n": self.n_sessions,
                "per_locale": self.per_locale,
            },
            sort_keys=True,
        )


def rank(
    session_id: int,
    scored: Sequence[tuple[ItemId, float, CandidateSource]],
    k: int,
) -> RankedList:
    """Order scored candidates and truncate to k.  Raises on duplicates."""
    seen = set()
    for item, _, _ in scored:
        if item in seen:
            raise ValueError(f"duplicate scored item {item}")
        seen.add(item)
    ordered = sorted(
        scored, key=lambda e: (-e[1], _SOURCE_PRIORITY[e[2]], e[0])
    )
    return RankedList(session_id=session_id, items=[it for it, _, _ in ordered[:k]])


def mrr_at_k(
    predictions: Sequence[RankedList],
    truth: Mapping[int, ItemId],
    k: int,
) -> EvalReport:
    """Mean reciprocal rank of truth within the top-k, 0 if absent."""
    total = 0.0
    hits = 0
    by_locale: dict[str, list[float]] = {}
    for pred in predictions:
        if pred.session_id not in truth:
            raise ValueError(f"missing truth for session {pred.session_id}")
        target = truth[pred.session_id]
        rr = 0.0
        for pos, item in enumerate(pred.items[:k], start=1):
            if item == target:
                rr = 1.0 / pos
                hits += 1
                break
        total += rr
        by_locale.setdefault(target.locale, []).append(rr)
    n = len(predictions)
    per_locale = {
        loc: {
            "mrr": sum(v) / len(v),
            "hit_rate": sum(1 for x in v if x > 0) / len(v),
            "n": len(v),
        }
        for loc, v in sorted(by_locale.items())
    }
    return EvalReport(
        mrr=total / n if n else 0.0,
        n_sessions=n,
        hit_rate_at_k=hits / n if n else 0.0,
        per_locale=per_locale,
    )


def ensemble(
    session_id: int,
    model_scores: Sequence[Mapping[ItemId, float]],
    k: int,
) -> RankedList:
    """Mean probability across models; an item absent from a model's
    candidate set contributes 0 to its mean."""
    if len(model_scores) < 2:
        raise ValueError("ensemble needs at least 2 models")
    items: set[ItemId] = set()
    for scores in model_scores:
        items.update(scores)
    n_models = len(model_scores)
    merged = [
        (item, sum(s.get(item, 0.0) for s in model_scores) / n_models,
         CandidateSource.COVIS)
        for item in items
    ]
    return rank(session_id, merged, k)


def popularity_ranking(
    stats: ItemStats, locale: str, k: int, session_id: int = -1
) -> RankedList:
    """Baseline: items of one locale by descending next_count, ties by
    ascending ItemId."""
    pool = [
        (item, c) for item, c in stats.next_count.items() if item.locale == locale
    ]
    pool.sort(key=lambda kv: (-kv[1], kv[0]))
    return RankedList(session_id=session_id, items=[it for it, _ in pool[:k]])


def write_report(report: EvalReport, stream: IO[str]) -> None:
    stream.write(report.to_json() + "\n")
