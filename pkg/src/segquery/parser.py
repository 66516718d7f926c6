"""Parsing of ``name<SEG>,name<NEG>,...`` responses with failure diagnostics."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .builder import EMPTY_RESPONSE, NEG, SEG, TEMPLATES, TrainingSample, render_items
from .core import CategoryTable, normalize_name

_TAG = re.compile(r"<(SEG|NEG)>")
_TEMPLATE_PATTERNS = [
    re.compile("^" + re.escape(t).replace(re.escape("{names}"), "(?P<names>.+?)") + "$")
    for t in TEMPLATES
]


@dataclass(frozen=True)
class ParsedItem:
    raw_name: str
    resolved_id: Optional[int]
    tag: str  # "SEG" or "NEG"
    seg_index: Optional[int] = None

    @property
    def token(self) -> str:
        return SEG if self.tag == "SEG" else NEG


@dataclass
class ParseReport:
    items: list[ParsedItem] = field(default_factory=list)
    missing: list[int] = field(default_factory=list)
    extra: list[str] = field(default_factory=list)
    duplicates: list[str] = field(default_factory=list)
    order_matches_query: bool = True
    trailing_garbage: Optional[str] = None

    @property
    def seg_items(self) -> list[ParsedItem]:
        return [it for it in self.items if it.tag == "SEG"]

    def first_items(self) -> dict[int, ParsedItem]:
        """First occurrence per resolved class id; later duplicates are ignored."""
        first: dict[int, ParsedItem] = {}
        for it in self.items:
            if it.resolved_id is not None and it.resolved_id not in first:
                first[it.resolved_id] = it
        return first

    def to_dict(self) -> dict:
        return {
            "items": [{"raw_name": it.raw_name, "resolved_id": it.resolved_id, "tag": it.tag,
                       "seg_index": it.seg_index} for it in self.items],
            "missing": self.missing,
            "extra": self.extra,
            "duplicates": self.duplicates,
            "order_matches_query": self.order_matches_query,
            "trailing_garbage": self.trailing_garbage,
        }


def extract_query_names(query: str) -> Optional[list[str]]:
    """Recover the class-name list from a query built with one of the fixed templates."""
    text = query.strip()
    for pat in _TEMPLATE_PATTERNS:
        m = pat.match(text)
        if m:
            return [n.strip() for n in m.group("names").split(",") if n.strip()]
    return None


def _scan(text: str) -> tuple[list[tuple[str, str]], list[str]]:
    """Greedy left-to-right scan into (name, tag) pairs plus unparseable spans."""
    pairs: list[tuple[str, str]] = []
    garbage: list[str] = []
    pos = 0
    n = len(text)
    while pos < n:
        m = _TAG.search(text, pos)
        if m is None:
            rest = text[pos:].strip()
            if rest and rest != ".":
                garbage.append(rest)
            break
        span = text[pos:m.start()]
        if "," in span:
            # recovery: a malformed item ran into the next one; keep the tail
            head, span = span.rsplit(",", 1)
            if head.strip():
                garbage.append(head.strip())
        name = span.strip()
        if name:
            pairs.append((name, m.group(1)))
        else:
            garbage.append(m.group(0))
        pos = m.end()
        if pos < n and text[pos] == ",":
            pos += 1
    return pairs, garbage


def parse_response(text: str, query_names: Sequence[str], table: CategoryTable) -> ParseReport:
    if text.strip() == EMPTY_RESPONSE:
        pairs, garbage = [], []
    else:
        pairs, garbage = _scan(text)

    query_ids: list[Optional[int]] = []
    query_lookup: dict[str, Optional[int]] = {}
    for qn in query_names:
        cid, _ = table.resolve(qn)
        query_ids.append(cid)
        query_lookup.setdefault(normalize_name(qn), cid)
    queried = {c for c in query_ids if c is not None}

    report = ParseReport()
    seen_keys: set = set()
    seg_index = 0
    for name, tag in pairs:
        key = normalize_name(name)
        if key in query_lookup:
            cid = query_lookup[key]
        else:
            cid, _ = table.resolve(name)
        idx = None
        if tag == "SEG":
            idx = seg_index
            seg_index += 1
        report.items.append(ParsedItem(name, cid, tag, idx))

        dedup_key = ("id", cid) if cid is not None else ("name", key)
        if dedup_key in seen_keys:
            report.duplicates.append(name)
        seen_keys.add(dedup_key)
        if cid is None or cid not in queried:
            report.extra.append(name)

    answered = set(report.first_items())
    report.missing = [c for c in dict.fromkeys(query_ids) if c is not None and c not in answered]

    in_query_order = [c for c in report.first_items() if c in queried]
    rank = {c: i for i, c in reversed(list(enumerate(query_ids))) if c is not None}
    ranks = [rank[c] for c in in_query_order]
    report.order_matches_query = ranks == sorted(ranks)
    report.trailing_garbage = " ".join(garbage) if garbage else None
    return report


def roundtrip_check(sample: TrainingSample, table: CategoryTable) -> bool:
    names = extract_query_names(sample.query)
    if names is None:
        return False
    report = parse_response(sample.response, names, table)
    if report.trailing_garbage is not None:
        return False
    regenerated = render_items((it.raw_name, it.token) for it in report.items)
    seg_ids = tuple(it.resolved_id for it in report.seg_items)
    return regenerated == sample.response and seg_ids == tuple(sample.seg_target_ids)
