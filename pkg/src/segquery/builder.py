"""Training-sequence construction for multi-class segmentation queries.

A query names a randomly sampled subset of the dataset classes; the response
answers every sampled class with ``<SEG>`` (present) or ``<NEG>`` (absent).
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

from .core import CategoryTable, ImageRecord, Manifest

SEG = "<SEG>"
NEG = "<NEG>"
IMAGE_TOKEN = "<IMAGE>"
EMPTY_RESPONSE = "none of the requested classes are present."

TEMPLATES: tuple[str, ...] = (
    "<IMAGE> Can you segment the {names} in this image?",
    "<IMAGE> Could you segment the {names} in this picture?",
    "<IMAGE> What are the masks of the {names} in this image?",
    "<IMAGE> Can you provide segmentation masks for the {names} in this image?",
    "<IMAGE> Would you please segment the {names} shown in this image?",
)


@dataclass(frozen=True)
class BuilderConfig:
    min_sample: int = 3
    max_sample: Optional[int] = None  # None -> min(20, table size)
    augment_negatives: bool = True
    order_consistent: bool = True
    template_id: int = 0
    seed: int = 0

    def resolved(self, table: CategoryTable) -> "BuilderConfig":
        """Fill the default ``max_sample`` and validate against ``table``."""
        max_sample = self.max_sample if self.max_sample is not None else min(20, len(table))
        cfg = BuilderConfig(self.min_sample, max_sample, self.augment_negatives,
                            self.order_consistent, self.template_id, self.seed)
        if cfg.min_sample < 1:
            raise ValueError("min_sample must be >= 1")
        if cfg.max_sample < cfg.min_sample:
            raise ValueError(f"max_sample ({cfg.max_sample}) < min_sample ({cfg.min_sample})")
        if cfg.max_sample > len(table):
            raise ValueError(f"max_sample ({cfg.max_sample}) exceeds table size ({len(table)})")
        if not 0 <= cfg.template_id < len(TEMPLATES):
            raise ValueError(f"template_id must be in [0, {len(TEMPLATES)})")
        if not 0 <= cfg.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        return cfg


@dataclass(frozen=True)
class TrainingSample:
    image_id: str
    query: str
    response: str
    seg_target_ids: tuple[int, ...]

    def to_json(self) -> str:
        return json.dumps({"image_id": self.image_id, "query": self.query,
                           "response": self.response, "seg_targets": list(self.seg_target_ids)})

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainingSample":
        return cls(doc["image_id"], doc["query"], doc["response"], tuple(doc["seg_targets"]))


def image_rng(seed: int, image_id: str) -> random.Random:
    # str seeds hash through sha512, so the stream is stable across processes
    return random.Random(f"{seed}:{image_id}")


def sample_class_list(table: CategoryTable, cfg: BuilderConfig, rng: random.Random) -> list[int]:
    k = rng.randint(cfg.min_sample, cfg.max_sample)
    return rng.sample(table.ids, k)


def build_query(names: Sequence[str], template_id: int = 0) -> str:
    if not names:
        raise ValueError("cannot build a query from an empty name list")
    return TEMPLATES[template_id].format(names=", ".join(names))


def render_items(items: Iterable[tuple[str, str]]) -> str:
    """Render ``(name, tag)`` pairs in response grammar; tag is SEG or NEG."""
    parts = [f"{name}{tag}" for name, tag in items]
    if not parts:
        return EMPTY_RESPONSE
    return ",".join(parts) + "."


def build_response(sampled_ids: Sequence[int], present_ids, table: CategoryTable,
                   cfg: BuilderConfig) -> tuple[str, list[int]]:
    if not sampled_ids:
        raise ValueError("sampled_ids must be non-empty")
    ordered = list(sampled_ids)
    if not cfg.order_consistent:
        ordered.sort(key=table.canonical_rank)
    present = set(present_ids)
    if not cfg.augment_negatives:
        ordered = [c for c in ordered if c in present]
    items = [(table.name(c), SEG if c in present else NEG) for c in ordered]
    return render_items(items), [c for c in ordered if c in present]


def build_sample(record: ImageRecord, table: CategoryTable, cfg: BuilderConfig,
                 rng: random.Random) -> TrainingSample:
    sampled = sample_class_list(table, cfg, rng)
    query = build_query([table.name(c) for c in sampled], cfg.template_id)
    response, targets = build_response(sampled, record.present_ids, table, cfg)
    return TrainingSample(record.image_id, query, response, tuple(targets))


def build_single_target_sample(record: ImageRecord, table: CategoryTable, rng: random.Random,
                               template_id: int = 0) -> TrainingSample:
    """Baseline mode: one existent class per query, no negatives."""
    if not record.present_ids:
        raise ValueError(f"image {record.image_id!r} has no present classes")
    class_id = rng.choice(sorted(record.present_ids))
    name = table.name(class_id)
    return TrainingSample(record.image_id, build_query([name], template_id),
                          render_items([(name, SEG)]), (class_id,))


def build_dataset(manifest: Manifest, cfg: BuilderConfig, samples_per_image: int,
                  single_target: bool = False) -> Iterator[TrainingSample]:
    cfg = cfg.resolved(manifest.table)
    for record in manifest.records:
        rng = image_rng(cfg.seed, record.image_id)
        for _ in range(samples_per_image):
            if single_target:
                yield build_single_target_sample(record, manifest.table, rng, cfg.template_id)
            else:
                yield build_sample(record, manifest.table, cfg, rng)
