"""Chunked inference: split a class list into sub-queries, dispatch, merge."""
from __future__ import annotations

import json
import logging
import math
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence, Union

from .builder import NEG, SEG, build_query, render_items
from .core import BinaryMask, CategoryTable, Manifest, rle_decode, rle_encode, rle_from_text, rle_to_text
from .parser import ParseReport, extract_query_names, parse_response

log = logging.getLogger(__name__)

ChunkSpec = Union[str, int]
_FRACTION = re.compile(r"^N(?:/(\d+))?$")


class TransportError(RuntimeError):
    def __init__(self, message: str, chunk_index: Optional[int] = None):
        self.chunk_index = chunk_index
        if chunk_index is not None:
            message = f"chunk {chunk_index}: {message}"
        super().__init__(message)


class AlignmentError(ValueError):
    """Endpoint returned a mask count that disagrees with its ``<SEG>`` count."""

    def __init__(self, message: str, chunk_index: Optional[int] = None):
        self.chunk_index = chunk_index
        if chunk_index is not None:
            message = f"chunk {chunk_index}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class ChunkPlan:
    chunks: tuple[tuple[int, ...], ...]
    chunk_size_spec: str


def _split_even(ids: list[int], n_chunks: int) -> list[list[int]]:
    base, extra = divmod(len(ids), n_chunks)
    out, start = [], 0
    for i in range(n_chunks):
        size = base + (1 if i < extra else 0)
        out.append(ids[start:start + size])
        start += size
    return out


def plan_chunks(ids: Sequence[int], spec: ChunkSpec) -> ChunkPlan:
    """Partition ``ids`` preserving order.

    ``"N/k"`` yields ``min(k, len(ids))`` chunks; an integer is a maximum chunk
    size. Sizes differ by at most one, earlier chunks take the remainder.
    """
    ids = list(ids)
    if not ids:
        raise ValueError("cannot plan chunks for an empty class list")
    if len(set(ids)) != len(ids):
        raise ValueError("class list contains repeated ids")
    if isinstance(spec, str) and spec.strip().isdigit():
        spec = int(spec)
    if isinstance(spec, int):
        if spec < 1:
            raise ValueError("explicit chunk size must be >= 1")
        n_chunks = math.ceil(len(ids) / spec)
        label = str(spec)
    else:
        m = _FRACTION.match(spec.strip())
        if not m:
            raise ValueError(f"unrecognized chunk spec {spec!r}")
        k = int(m.group(1) or 1)
        if k < 1:
            raise ValueError("chunk divisor must be >= 1")
        n_chunks = min(k, len(ids))
        label = spec.strip()
    return ChunkPlan(tuple(tuple(c) for c in _split_even(ids, n_chunks)), label)


@dataclass(frozen=True)
class EndpointReply:
    text: str
    masks: tuple[BinaryMask, ...]


class ModelEndpoint(Protocol):
    def submit(self, image_id: str, query: str) -> EndpointReply: ...


class OracleEndpoint:
    """Answers from ground truth in perfect, order-consistent response format.

    ``drop_prob`` omits each positive class independently with a draw keyed on
    ``(seed, image_id, class_id)``, so omissions do not depend on chunking.
    ``shuffle`` answers in a seeded order unrelated to the query order.
    """

    def __init__(self, manifest: Manifest, drop_prob: float = 0.0, seed: int = 0, shuffle: bool = False):
        if not 0.0 <= drop_prob <= 1.0:
            raise ValueError("drop_prob must be in [0, 1]")
        self.manifest = manifest
        self.table = manifest.table
        self.drop_prob = drop_prob
        self.seed = seed
        self.shuffle = shuffle
        self._labelmaps = {r.image_id: r.load_labelmap() for r in manifest.records}
        self._present = {r.image_id: r.present_ids for r in manifest.records}

    def dropped(self, image_id: str, class_id: int) -> bool:
        if self.drop_prob == 0.0:
            return False
        return random.Random(f"{self.seed}:{image_id}:{class_id}").random() < self.drop_prob

    def submit(self, image_id: str, query: str) -> EndpointReply:
        if image_id not in self._labelmaps:
            raise TransportError(f"unknown image id {image_id!r}")
        names = extract_query_names(query)
        if names is None:
            raise TransportError(f"query does not match any template: {query!r}")
        lmap = self._labelmaps[image_id]
        present = self._present[image_id]
        answers = []
        for name in names:
            cid, _ = self.table.resolve(name)
            if cid is not None and cid in present:
                if self.dropped(image_id, cid):
                    continue
                answers.append((name, cid))
            else:
                answers.append((name, None))
        if self.shuffle:
            random.Random(f"{self.seed}:{image_id}:{query}").shuffle(answers)
        text = render_items((name, SEG if cid is not None else NEG) for name, cid in answers)
        masks = tuple(lmap.class_mask(cid) for _, cid in answers if cid is not None)
        return EndpointReply(text, masks)


def oracle_endpoint(manifest: Manifest, drop_prob: float = 0.0, seed: int = 0,
                    shuffle: bool = False) -> OracleEndpoint:
    return OracleEndpoint(manifest, drop_prob, seed, shuffle)


def reply_to_wire(reply: EndpointReply) -> dict:
    return {"text": reply.text,
            "masks": [{"rle": rle_to_text(rle_encode(m)), "width": m.width, "height": m.height}
                      for m in reply.masks]}


def reply_from_wire(doc: dict) -> EndpointReply:
    try:
        masks = tuple(rle_decode(rle_from_text(m["rle"]), int(m["width"]), int(m["height"]))
                      for m in doc["masks"])
        return EndpointReply(str(doc["text"]), masks)
    except (KeyError, TypeError, ValueError) as exc:
        raise TransportError(f"malformed endpoint reply: {exc}") from exc


class HttpEndpoint:
    """Client for ``POST /v1/segment-query``."""

    def __init__(self, base_url: str, timeout: float = 30.0, client=None):
        import httpx

        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def submit(self, image_id: str, query: str) -> EndpointReply:
        import httpx

        try:
            resp = self._client.post(f"{self.base_url}/v1/segment-query",
                                     json={"image_id": image_id, "query": query})
        except httpx.HTTPError as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"endpoint returned HTTP {resp.status_code}")
        return reply_from_wire(resp.json())


@dataclass(frozen=True)
class RetryPolicy:
    retries: int = 2
    backoff: float = 0.1  # seconds; doubles per attempt

    def call(self, fn, *args):
        for attempt in range(self.retries + 1):
            try:
                return fn(*args)
            except TransportError as exc:
                if attempt == self.retries:
                    raise
                delay = self.backoff * (2 ** attempt)
                log.warning("transport failure (%s); retry %d in %.2fs", exc, attempt + 1, delay)
                time.sleep(delay)


OUTCOMES = ("seg", "neg", "unanswered")


@dataclass(frozen=True)
class ClassPrediction:
    class_id: int
    outcome: str
    mask: Optional[BinaryMask]
    chunk_index: int

    def __post_init__(self):
        if self.outcome not in OUTCOMES:
            raise ValueError(f"bad outcome {self.outcome!r}")
        if (self.mask is not None) != (self.outcome == "seg"):
            raise ValueError("a class has a mask iff its outcome is seg")


@dataclass(frozen=True)
class MergedPrediction:
    image_id: str
    classes: tuple[ClassPrediction, ...]  # in requested order
    reports: tuple[ParseReport, ...] = ()

    def get(self, class_id: int) -> ClassPrediction:
        for c in self.classes:
            if c.class_id == class_id:
                return c
        raise KeyError(class_id)

    def to_records(self) -> list[dict]:
        return [{"image_id": self.image_id, "class_id": c.class_id, "outcome": c.outcome,
                 "rle": rle_to_text(rle_encode(c.mask)) if c.mask is not None else None}
                for c in self.classes]

    def canonical_json(self) -> str:
        """Serialization independent of chunking (provenance excluded)."""
        recs = sorted(self.to_records(), key=lambda r: r["class_id"])
        return json.dumps(recs, sort_keys=True, separators=(",", ":"))


def merge_chunk(chunk_ids: Sequence[int], chunk_index: int, report: ParseReport,
                masks: Sequence[BinaryMask]) -> list[ClassPrediction]:
    first = report.first_items()
    out = []
    for cid in chunk_ids:
        item = first.get(cid)
        if item is None:
            out.append(ClassPrediction(cid, "unanswered", None, chunk_index))
        elif item.tag == "SEG":
            out.append(ClassPrediction(cid, "seg", masks[item.seg_index], chunk_index))
        else:
            out.append(ClassPrediction(cid, "neg", None, chunk_index))
    return out


def run_chunked(image_id: str, ids: Sequence[int], table: CategoryTable, endpoint: ModelEndpoint,
                spec: ChunkSpec = "N", *, template_id: int = 0, jobs: int = 1,
                retry: RetryPolicy = RetryPolicy()) -> MergedPrediction:
    plan = plan_chunks(ids, spec)

    def dispatch(index: int):
        names = [table.name(c) for c in plan.chunks[index]]
        query = build_query(names, template_id)
        try:
            reply = retry.call(endpoint.submit, image_id, query)
        except TransportError as exc:
            raise TransportError(str(exc), index) from exc
        report = parse_response(reply.text, names, table)
        if len(reply.masks) != len(report.seg_items):
            raise AlignmentError(f"{len(reply.masks)} masks for {len(report.seg_items)} <SEG> tokens", index)
        return report, reply.masks

    if jobs > 1 and len(plan.chunks) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(dispatch, range(len(plan.chunks))))
    else:
        results = [dispatch(i) for i in range(len(plan.chunks))]

    by_class: dict[int, ClassPrediction] = {}
    for index, (report, masks) in enumerate(results):
        for pred in merge_chunk(plan.chunks[index], index, report, masks):
            by_class[pred.class_id] = pred
    classes = tuple(by_class[c] for c in ids)
    return MergedPrediction(image_id, classes, tuple(r for r, _ in results))
