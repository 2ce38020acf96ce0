"""Ranked-retrieval metrics: average precision and normalized DCG, with
micro (per-query) and macro (per-class) aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class RelevanceList:
    """Binary relevance of a ranked list: gains[i] = 1 iff item i shares the
    query's class. class_size counts same-class corpus items, query excluded."""

    gains: tuple[int, ...]
    class_size: int

    def __post_init__(self):
        if any(g not in (0, 1) for g in self.gains):
            raise MetricsError("gains must be binary")
        if sum(self.gains) != self.class_size:
            raise MetricsError(
                f"sum(gains)={sum(self.gains)} != class_size={self.class_size}"
            )


@dataclass(frozen=True)
class MetricsReport:
    micro_map: float
    micro_dcg: float
    macro_map: float
    macro_dcg: float
    query_count: int
    skipped_queries: int
    per_class: dict[str, tuple[float, float, int]]  # class -> (map, dcg, n)


def average_precision(rel: RelevanceList) -> float:
    """Mean over relevant positions of precision at that position."""
    if rel.class_size < 1:
        raise MetricsError("average_precision needs class_size >= 1")
    hits = 0
    total = 0.0
    for i, g in enumerate(rel.gains, start=1):
        if g:
            hits += 1
            total += hits / i
    return total / rel.class_size


def mean_average_precision(aps: list[float]) -> float:
    if not aps:
        raise MetricsError("empty query set")
    return sum(aps) / len(aps)


def dcg(rel: RelevanceList) -> float:
    """Position-discounted gain normalized by the ideal ranking's value.

    Gain at position 1 counts fully; position i >= 2 is discounted by
    1/log2(i). The normalizer places all class members first.
    """
    if rel.class_size < 1:
        raise MetricsError("dcg needs class_size >= 1")
    value = float(rel.gains[0]) if rel.gains else 0.0
    for i, g in enumerate(rel.gains[1:], start=2):
        if g:
            value += 1.0 / math.log2(i)
    ideal = 1.0 + sum(1.0 / math.log2(j) for j in range(2, rel.class_size + 1))
    return value / ideal


def relevance_from_ranking(
    ranked_ids: list[str], query_class: str, labels: dict[str, str]
) -> RelevanceList:
    gains = tuple(int(labels[i] == query_class) for i in ranked_ids)
    return RelevanceList(gains, sum(gains))


def aggregate(per_query: list[tuple[str, float, float]]) -> MetricsReport:
    """per_query: (class_label, ap, dcg) per scored query.

    Micro = unweighted mean over queries; macro = unweighted mean over
    classes of the per-class query means. Queries skipped upstream (singleton
    classes) are not in the list.
    """
    if not per_query:
        raise MetricsError("no scored queries")
    classes: dict[str, list[tuple[float, float]]] = {}
    for label, ap, d in per_query:
        classes.setdefault(label, []).append((ap, d))
    n = len(per_query)
    micro_map = sum(ap for _, ap, _ in per_query) / n
    micro_dcg = sum(d for _, _, d in per_query) / n
    per_class = {
        label: (
            sum(a for a, _ in vals) / len(vals),
            sum(d for _, d in vals) / len(vals),
            len(vals),
        )
        for label, vals in sorted(classes.items())
    }
    macro_map = sum(v[0] for v in per_class.values()) / len(per_class)
    macro_dcg = sum(v[1] for v in per_class.values()) / len(per_class)
    return MetricsReport(micro_map, micro_dcg, macro_map, macro_dcg, n, 0, per_class)


@dataclass
class EvaluationResult:
    report: MetricsReport
    skipped: list[str] = field(default_factory=list)


def evaluate_rankings(
    rankings: list,  # list of retrieval.RankedList
    labels: dict[str, str],
) -> EvaluationResult:
    """Score a set of ranked lists; singleton-class queries are skipped and
    reported rather than scored zero."""
    scored: list[tuple[str, float, float]] = []
    skipped: list[str] = []
    for rl in rankings:
        qclass = labels[rl.query_id]
        rel = relevance_from_ranking([i for i, _ in rl.entries], qclass, labels)
        if rel.class_size == 0:
            skipped.append(rl.query_id)
            continue
        scored.append((qclass, average_precision(rel), dcg(rel)))
    report = aggregate(scored)
    report = MetricsReport(
        report.micro_map, report.micro_dcg, report.macro_map, report.macro_dcg,
        report.query_count, len(skipped), report.per_class,
    )
    return EvaluationResult(report, skipped)


def format_report_row(model: str, views: int, r: MetricsReport) -> str:
    return (
        f"{model:<16} {views:>5} {r.micro_dcg:>9.3f} {r.micro_map:>9.3f} "
        f"{r.macro_dcg:>9.3f} {r.macro_map:>9.3f}"
    )


REPORT_HEADER = (
    f"{'Model':<16} {'Views':>5} {'mDCG':>9} {'mMAP':>9} {'MDCG':>9} {'MMAP':>9}"
)
