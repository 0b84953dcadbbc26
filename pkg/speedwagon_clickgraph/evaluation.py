"""Click prediction and relevance estimation metrics."""
from __future__ import annotations

import dataclasses
import logging
import math
from typing import (
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
)

import numpy as np

from speedwagon_clickgraph.session_log import Session

__all__ = [
    "NDCG_CUTOFFS",
    "MetricsReport",
    "log_likelihood",
    "perplexity",
    "ndcg_at_k",
    "evaluate_predictions",
    "combine_reports",
    "format_table",
    "format_key_values",
]

logger = logging.getLogger(__name__)

NDCG_CUTOFFS = (1, 3, 5, 10)
PREDICTION_EPSILON = 1e-7


def _validate(
    predictions: Sequence[float],
    clicks: Sequence[float]
) -> Tuple[np.ndarray, np.ndarray]:
    predicted = np.asarray(predictions, dtype=np.float64)
    observed = np.asarray(clicks, dtype=np.float64)
    if predicted.shape != observed.shape:
        raise ValueError(
            f"{predicted.size} predictions for {observed.size} clicks"
        )
    return (
        np.clip(predicted, PREDICTION_EPSILON, 1.0 - PREDICTION_EPSILON),
        observed
    )


def _log2_likelihoods(
    predictions: np.ndarray,
    clicks: np.ndarray
) -> np.ndarray:
    return clicks * np.log2(predictions) \
        + (1.0 - clicks) * np.log2(1.0 - predictions)


def log_likelihood(
    predictions: Sequence[float],
    clicks: Sequence[float]
) -> float:
    """Mean natural log-likelihood of the observed clicks.

    Raises:
        ValueError: if the lengths differ.
    """
    predicted, observed = _validate(predictions, clicks)
    if not predicted.size:
        return float("nan")
    return float(
        np.mean(
            observed * np.log(predicted)
            + (1.0 - observed) * np.log(1.0 - predicted)
        )
    )


def perplexity(
    predictions: Sequence[float],
    clicks: Sequence[float],
    ranks: Sequence[int]
) -> Tuple[List[float], float]:
    """Perplexity at each rank and its average over ranks.

    Args:
        predictions: click probabilities, one per impression.
        clicks: observed clicks.
        ranks: 1-based rank of each impression.

    Returns:
        ``PPL@r`` for r = 1..max rank, NaN where a rank has no impressions,
        and the arithmetic mean over the ranks that have impressions.
    """
    predicted, observed = _validate(predictions, clicks)
    ranks_array = np.asarray(ranks, dtype=np.int64)
    if ranks_array.shape != predicted.shape:
        raise ValueError("ranks must align with predictions")
    if not predicted.size:
        return [], float("nan")
    per_impression = _log2_likelihoods(predicted, observed)
    by_rank = []
    for rank in range(1, int(ranks_array.max()) + 1):
        selected = ranks_array == rank
        if selected.any():
            by_rank.append(float(2.0 ** -np.mean(per_impression[selected])))
        else:
            by_rank.append(float("nan"))
    return by_rank, float(np.nanmean(by_rank))


def _dcg(grades: np.ndarray, k: int) -> float:
    top = grades[:k]
    discounts = np.log2(np.arange(2, top.size + 2))
    return float(np.sum((2.0 ** top - 1.0) / discounts))


def ndcg_at_k(
    scores: Sequence[Sequence[float]],
    grades: Sequence[Sequence[float]],
    k: int
) -> Tuple[float, int]:
    """Mean NDCG@k over result pages.

    Documents are sorted by descending score, ties keeping their displayed
    order. Pages whose grades are all zero are skipped.

    Returns:
        The mean and the number of pages it was taken over. The mean is
        NaN when every page was skipped.

    Raises:
        ValueError: if k is less than 1.
    """
    if k < 1:
        raise ValueError(f"k must be 1 or greater, got {k}")
    values = []
    for page_scores, page_grades in zip(scores, grades):
        graded = np.asarray(page_grades, dtype=np.float64)
        if not graded.any():
            continue
        order = np.argsort(
            -np.asarray(page_scores, dtype=np.float64), kind="stable"
        )
        ideal = _dcg(np.sort(graded)[::-1], k)
        values.append(_dcg(graded[order], k) / ideal)
    if not values:
        return float("nan"), 0
    return float(np.mean(values)), len(values)


@dataclasses.dataclass(frozen=True)
class MetricsReport:
    """Metrics of one set of sessions.

    Counts are carried so that reports of disjoint partitions can be
    recombined exactly.
    """

    label: str
    log_likelihood: float
    perplexity_by_rank: Tuple[float, ...]
    perplexity: float
    ndcg: Mapping[int, float]
    sessions: int
    queries: int
    impressions: int
    rank_impressions: Tuple[int, ...] = ()
    ndcg_queries: Mapping[int, int] = dataclasses.field(default_factory=dict)

    def as_key_values(self) -> List[Tuple[str, float]]:
        """(metric, value) pairs in a fixed order."""
        values: List[Tuple[str, float]] = [
            ("LL", self.log_likelihood),
            ("PPL", self.perplexity),
        ]
        values.extend(
            (f"PPL@{rank}", value)
            for rank, value in enumerate(self.perplexity_by_rank, start=1)
        )
        values.extend(
            (f"NDCG@{k}", self.ndcg[k]) for k in sorted(self.ndcg)
        )
        values.extend(
            [
                ("sessions", float(self.sessions)),
                ("queries", float(self.queries)),
                ("impressions", float(self.impressions)),
            ]
        )
        return values


def evaluate_predictions(
    sessions: Sequence[Session],
    predictions: Sequence[Sequence[float]],
    scores: Optional[Sequence[Sequence[float]]] = None,
    relevance: Optional[Mapping[Tuple[int, int], int]] = None,
    label: str = "Full",
    cutoffs: Iterable[int] = NDCG_CUTOFFS,
) -> MetricsReport:
    """Compute every metric for sessions and their predictions.

    Args:
        sessions: evaluated sessions.
        predictions: click probabilities of each session in session order.
        scores: relevance scores per session, same layout as predictions.
            NDCG is only computed when both scores and relevance are given.
        relevance: graded relevance keyed by (query id, doc id).
        label: partition name.
        cutoffs: NDCG truncation levels.
    """
    if len(sessions) != len(predictions):
        raise ValueError(
            f"{len(predictions)} predictions for {len(sessions)} sessions"
        )
    clicks: List[float] = []
    ranks: List[int] = []
    page_scores: List[np.ndarray] = []
    page_grades: List[np.ndarray] = []
    query_count = 0
    for number, session in enumerate(sessions):
        offset = 0
        session_predictions = np.asarray(predictions[number])
        if session_predictions.size != session.impression_count:
            raise ValueError(
                f"Session {session.session_id} has "
                f"{session.impression_count} impressions but "
                f"{session_predictions.size} predictions"
            )
        for query in session.queries:
            query_count += 1
            length = len(query.impressions)
            clicks.extend(float(c) for c in query.clicks)
            ranks.extend(i.position for i in query.impressions)
            if scores is not None and relevance is not None:
                page_scores.append(
                    np.asarray(scores[number][offset:offset + length])
                )
                page_grades.append(
                    np.asarray(
                        [relevance.get((query.query_id, doc), 0)
                         for doc in query.doc_ids],
                        dtype=np.float64
                    )
                )
            offset += length
    flat_predictions = np.concatenate(
        [np.asarray(p, dtype=np.float64) for p in predictions]
    ) if predictions else np.zeros(0)
    by_rank, average = perplexity(flat_predictions, clicks, ranks)
    rank_counts = tuple(
        int(count) for count in np.bincount(
            np.asarray(ranks, dtype=np.int64)
        )[1:]
    ) if ranks else ()
    ndcg: Dict[int, float] = {}
    ndcg_queries: Dict[int, int] = {}
    if page_scores:
        for k in cutoffs:
            ndcg[k], ndcg_queries[k] = ndcg_at_k(page_scores, page_grades, k)
    return MetricsReport(
        label=label,
        log_likelihood=log_likelihood(flat_predictions, clicks),
        perplexity_by_rank=tuple(by_rank),
        perplexity=average,
        ndcg=ndcg,
        sessions=len(sessions),
        queries=query_count,
        impressions=len(clicks),
        rank_impressions=rank_counts,
        ndcg_queries=ndcg_queries,
    )


def _weighted(values: Sequence[float], weights: Sequence[int]) -> float:
    pairs = [(v, w) for v, w in zip(values, weights) if w]
    total = sum(w for _, w in pairs)
    if not total:
        return float("nan")
    return sum(v * w for v, w in pairs) / total


def combine_reports(
    reports: Sequence[MetricsReport],
    label: str = "Full"
) -> MetricsReport:
    """Metrics of the union of disjoint partitions, from their reports."""
    ranks = max((len(r.rank_impressions) for r in reports), default=0)

    def rank_count(report: MetricsReport, rank: int) -> int:
        counts = report.rank_impressions
        return counts[rank] if rank < len(counts) else 0

    by_rank = []
    for rank in range(ranks):
        weights = [rank_count(report, rank) for report in reports]
        exponents = [
            math.log2(report.perplexity_by_rank[rank]) if weight else 0.0
            for report, weight in zip(reports, weights)
        ]
        combined = _weighted(exponents, weights)
        by_rank.append(
            float("nan") if math.isnan(combined) else 2.0 ** combined
        )
    cutoffs = sorted({k for report in reports for k in report.ndcg})
    ndcg = {
        k: _weighted(
            [report.ndcg.get(k, 0.0) for report in reports],
            [report.ndcg_queries.get(k, 0) for report in reports]
        )
        for k in cutoffs
    }
    return MetricsReport(
        label=label,
        log_likelihood=_weighted(
            [report.log_likelihood for report in reports],
            [report.impressions for report in reports]
        ),
        perplexity_by_rank=tuple(by_rank),
        perplexity=float(np.nanmean(by_rank)) if by_rank else float("nan"),
        ndcg=ndcg,
        sessions=sum(report.sessions for report in reports),
        queries=sum(report.queries for report in reports),
        impressions=sum(report.impressions for report in reports),
        rank_impressions=tuple(
            sum(rank_count(report, rank) for report in reports)
            for rank in range(ranks)
        ),
        ndcg_queries={
            k: sum(report.ndcg_queries.get(k, 0) for report in reports)
            for k in cutoffs
        },
    )


def _cell(value: float) -> str:
    return "-" if math.isnan(value) else f"{value:.4f}"


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Human readable table, one row per report."""
    cutoffs = sorted({k for report in reports for k in report.ndcg})
    header = ["Partition", "Sessions", "LL", "PPL"] + [
        f"NDCG@{k}" for k in cutoffs
    ]
    rows = [header]
    for report in reports:
        rows.append(
            [
                report.label,
                str(report.sessions),
                _cell(report.log_likelihood),
                _cell(report.perplexity),
            ] + [_cell(report.ndcg.get(k, float("nan"))) for k in cutoffs]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = [
        "  ".join(cell.ljust(width) for cell, width in zip(row, widths))
        .rstrip()
        for row in rows
    ]
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines)


def format_key_values(reports: Sequence[MetricsReport]) -> List[str]:
    """Machine readable ``partition metric value`` lines."""
    lines = []
    for report in reports:
        partition = report.label.replace(" ", "_")
        for metric, value in report.as_key_values():
            lines.append(f"{partition} {metric} {value:.12g}")
    return lines
