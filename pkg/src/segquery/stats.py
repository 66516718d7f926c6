"""Length and balance statistics over a training corpus."""
from __future__ import annotations

from collections import Counter
from typing import Iterable

from .builder import TrainingSample
from .core import CategoryTable
from .parser import extract_query_names, parse_response


def _summary(values: list[int]) -> dict:
    if not values:
        return {"min": None, "max": None, "mean": None, "histogram": {}}
    hist = Counter(values)
    return {"min": min(values), "max": max(values), "mean": sum(values) / len(values),
            "histogram": {str(k): hist[k] for k in sorted(hist)}}


def corpus_stats(samples: Iterable[TrainingSample], table: CategoryTable) -> dict:
    item_counts, query_names, query_chars, response_chars = [], [], [], []
    pos_total = item_total = 0
    pos_ratio_bins: Counter = Counter()
    for s in samples:
        names = extract_query_names(s.query) or []
        report = parse_response(s.response, names, table)
        n_items = len(report.items)
        n_pos = len(report.seg_items)
        item_counts.append(n_items)
        query_names.append(len(names))
        query_chars.append(len(s.query))
        response_chars.append(len(s.response))
        pos_total += n_pos
        item_total += n_items
        if n_items:
            pos_ratio_bins[min(int(10 * n_pos / n_items), 9) / 10] += 1
    return {
        "samples": len(item_counts),
        "response_items": _summary(item_counts),
        "query_names": _summary(query_names),
        "query_chars": _summary(query_chars),
        "response_chars": _summary(response_chars),
        "positive_items": pos_total,
        "negative_items": item_total - pos_total,
        "positive_ratio": pos_total / item_total if item_total else None,
        "positive_ratio_histogram": {f"{k:.1f}": pos_ratio_bins[k] for k in sorted(pos_ratio_bins)},
    }
