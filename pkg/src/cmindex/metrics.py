"""Retrieval metrics over grouped ground truth.

Conventions follow each metric's usual dataset protocol: the N-S score
counts relevant images (the query included) among the top four of a
ranking that retains self-retrieval; average precision and top-k hit
rate drop the query from both the ranking and the relevance set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, MetricError
from .features import DESCRIPTOR_MAGIC, ImageRecord, load_descriptors
from .query import RankedList


@dataclass(frozen=True)
class GroundTruth:
    """Per query image, the ids sharing its group (itself included)."""

    relevant: dict[int, set[int]]


def ground_truth_from_records(records: list[ImageRecord]) -> GroundTruth:
    groups: dict[int, set[int]] = {}
    for rec in records:
        groups.setdefault(rec.group_id, set()).add(rec.image_id)
    return GroundTruth(relevant={rec.image_id: groups[rec.group_id] for rec in records})


def load_ground_truth(path) -> GroundTruth:
    """Read ground truth from a descriptor file (groups become relevance
    sets) or from text lines of the form `query_id rel_id rel_id ...`."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == DESCRIPTOR_MAGIC:
        return ground_truth_from_records(load_descriptors(path))
    relevant: dict[int, set[int]] = {}
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                ids = [int(v) for v in line.replace(":", " ").split()]
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad ground-truth line") from exc
            if not ids:
                continue
            relevant[ids[0]] = set(ids[1:]) | {ids[0]}
    if not relevant:
        raise FormatError(f"{path}: no ground-truth entries")
    return GroundTruth(relevant=relevant)


def ns_score(ranked: RankedList, truth: GroundTruth) -> float:
    """Relevant images among the top four (max 4, Ukbench style)."""
    relevant = truth.relevant.get(ranked.query_id)
    if relevant is None or len(relevant) != 4:
        raise MetricError(
            f"N-S score needs a 4-image relevance group for query {ranked.query_id}"
        )
    top = {image_id for image_id, _ in ranked.items[:4]}
    return float(len(top & relevant))


def average_precision(ranked: RankedList, truth: GroundTruth) -> float | None:
    """AP with the query excluded from its own ranking; None (with a
    warning) when the query has nothing relevant besides itself."""
    qid = ranked.query_id
    relevant = truth.relevant.get(qid, set()) - {qid}
    if not relevant:
        warnings.warn(f"query {qid} has no relevant images; skipped in mAP")
        return None
    hits = 0
    total = 0.0
    rank = 0
    for image_id, _ in ranked.items:
        if image_id == qid:
            continue
        rank += 1
        if image_id in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def mean_average_precision(aps: list[float | None]) -> float | None:
    vals = [v for v in aps if v is not None]
    return float(np.mean(vals)) if vals else None


def top_k_precision(ranked: RankedList, truth: GroundTruth, k: int) -> float:
    """1.0 when any relevant image (query aside) appears in the top k."""
    if k < 1:
        raise MetricError("k must be >= 1")
    qid = ranked.query_id
    relevant = truth.relevant.get(qid, set()) - {qid}
    rank = 0
    for image_id, _ in ranked.items:
        if image_id == qid:
            continue
        rank += 1
        if rank > k:
            break
        if image_id in relevant:
            return 1.0
    return 0.0


@dataclass
class PerQueryMetrics:
    query_id: int
    ns: float | None
    ap: float | None
    top1: float
    top10: float
    postings_visited: int | None = None
    entries_visited: int | None = None


@dataclass
class MetricsReport:
    n_queries: int
    ns_score: float | None
    mean_ap: float | None
    top1: float
    top10: float
    per_query: list[PerQueryMetrics] = field(repr=False, default_factory=list)
    postings_visited_mean: float | None = None
    entries_visited_mean: float | None = None
    bytes_per_feature: float | None = None
    total_bytes: int | None = None
    directory_bytes: int | None = None

    def to_dict(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "ns_score": self.ns_score,
            "map": self.mean_ap,
            "top1": self.top1,
            "top10": self.top10,
            "postings_visited_mean": self.postings_visited_mean,
            "entries_visited_mean": self.entries_visited_mean,
            "bytes_per_feature": self.bytes_per_feature,
            "total_bytes": self.total_bytes,
            "directory_bytes": self.directory_bytes,
            "per_query": [
                {
                    "query_id": q.query_id,
                    "ns": q.ns,
                    "ap": q.ap,
                    "top1": q.top1,
                    "top10": q.top10,
                    "postings_visited": q.postings_visited,
                    "entries_visited": q.entries_visited,
                }
                for q in self.per_query
            ],
        }


def compute_metrics(rankings: list[RankedList], truth: GroundTruth) -> MetricsReport:
    """Score a batch of rankings; aggregates are exact means of the
    per-query values."""
    if not rankings:
        raise MetricError("no rankings to score")
    ns_applicable = all(
        len(truth.relevant.get(r.query_id, ())) == 4 for r in rankings
    )
    per_query: list[PerQueryMetrics] = []
    for r in rankings:
        pq = PerQueryMetrics(
            query_id=r.query_id,
            ns=ns_score(r, truth) if ns_applicable else None,
            ap=average_precision(r, truth),
            top1=top_k_precision(r, truth, 1),
            top10=top_k_precision(r, truth, 10),
        )
        if r.stats is not None:
            pq.postings_visited = r.stats.postings_visited
            pq.entries_visited = r.stats.entries_visited
        per_query.append(pq)

    def _mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return MetricsReport(
        n_queries=len(rankings),
        ns_score=_mean([q.ns for q in per_query]) if ns_applicable else None,
        mean_ap=_mean([q.ap for q in per_query]),
        top1=float(np.mean([q.top1 for q in per_query])),
        top10=float(np.mean([q.top10 for q in per_query])),
        per_query=per_query,
        postings_visited_mean=_mean([q.postings_visited for q in per_query]),
        entries_visited_mean=_mean([q.entries_visited for q in per_query]),
    )
