"""mIoU, cIoU and gIoU accumulation.

All three metrics come from one mergeable accumulator: per-class
intersection/union pixel sums (mIoU), dataset-wide sums (cIoU) and the list of
per-sample IoUs (gIoU).
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import IGNORE_ID, BinaryMask, LabelMap, rle_decode, rle_from_text

log = logging.getLogger(__name__)


@dataclass
class MetricAccumulator:
    intersection: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    union: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    cum_intersection: int = 0
    cum_union: int = 0
    per_image_ious: list[float] = field(default_factory=list)
    # per-class gIoU terms, only filled when samples carry a class id
    per_class_ious: dict[int, list[float]] = field(default_factory=lambda: defaultdict(list))

    def merge(self, other: "MetricAccumulator") -> "MetricAccumulator":
        out = MetricAccumulator()
        for acc in (self, other):
            for c, v in acc.intersection.items():
                out.intersection[c] += v
            for c, v in acc.union.items():
                out.union[c] += v
            for c, v in acc.per_class_ious.items():
                out.per_class_ious[c].extend(v)
            out.cum_intersection += acc.cum_intersection
            out.cum_union += acc.cum_union
            out.per_image_ious.extend(acc.per_image_ious)
        return out

    def accumulate_semantic(self, pred_masks: dict[int, Optional[BinaryMask]], gt: LabelMap,
                            eval_ids: Iterable[int]) -> "MetricAccumulator":
        """Add one image. Missing or ``None`` predictions count as empty masks."""
        valid = gt.pixels != IGNORE_ID
        for c in eval_ids:
            mask = pred_masks.get(c)
            if mask is None:
                pred = np.zeros_like(valid)
            else:
                if (mask.width, mask.height) != (gt.width, gt.height):
                    raise ValueError(f"class {c}: mask {mask.width}x{mask.height} vs label map {gt.width}x{gt.height}")
                pred = mask.bits & valid
            target = gt.pixels == c
            self.intersection[c] += int(np.count_nonzero(pred & target))
            self.union[c] += int(np.count_nonzero(pred | target))
        return self

    def accumulate_referring(self, pred: BinaryMask, gt: BinaryMask,
                             class_id: Optional[int] = None) -> "MetricAccumulator":
        if (pred.width, pred.height) != (gt.width, gt.height):
            raise ValueError(f"mask {pred.width}x{pred.height} vs ground truth {gt.width}x{gt.height}")
        inter = int(np.count_nonzero(pred.bits & gt.bits))
        union = int(np.count_nonzero(pred.bits | gt.bits))
        self.cum_intersection += inter
        self.cum_union += union
        iou = inter / union if union else 1.0
        self.per_image_ious.append(iou)
        if class_id is not None:
            self.intersection[class_id] += inter
            self.union[class_id] += union
            self.per_class_ious[class_id].append(iou)
        return self

    def class_iou(self, c: int) -> Optional[float]:
        u = self.union.get(c, 0)
        return self.intersection.get(c, 0) / u if u else None

    def finalize_miou(self, eval_ids: Optional[Iterable[int]] = None) -> float:
        """Mean per-class IoU over classes with nonzero union; NaN if there are none."""
        ids = list(eval_ids) if eval_ids is not None else sorted(self.union)
        ious = [iou for iou in (self.class_iou(c) for c in ids) if iou is not None]
        if not ious:
            log.warning("mIoU undefined: every evaluated class has zero union")
            return math.nan
        return sum(ious) / len(ious)

    def finalize_ciou(self) -> float:
        if self.cum_union == 0:
            return 1.0 if self.per_image_ious else math.nan
        return self.cum_intersection / self.cum_union

    def finalize_giou(self) -> float:
        if not self.per_image_ious:
            return math.nan
        return sum(self.per_image_ious) / len(self.per_image_ious)


class EvaluationError(ValueError):
    pass


def evaluate_predictions(manifest, records: Iterable[dict], metric: str = "miou",
                         classes: Optional[Iterable[int]] = None) -> dict:
    """Score prediction JSONL records against a manifest's label maps.

    For ``miou`` every (image, class) in the manifest x eval classes is scored and
    absent/neg/unanswered predictions count as empty. For ``ciou``/``giou`` each
    prediction record is one sample.
    """
    if metric not in ("miou", "ciou", "giou"):
        raise EvaluationError(f"unknown metric {metric!r}")
    table = manifest.table
    eval_ids = list(classes) if classes is not None else table.ids
    unknown_cls = [c for c in eval_ids if c not in table]
    if unknown_cls:
        raise EvaluationError(f"unknown class ids: {unknown_cls}")

    by_image: dict[str, list[dict]] = defaultdict(list)
    for rec in records:
        by_image[rec["image_id"]].append(rec)
    manifest_ids = [r.image_id for r in manifest.records]
    stray = sorted(set(by_image) - set(manifest_ids))
    absent = sorted(set(manifest_ids) - set(by_image))
    if stray or absent:
        parts = []
        if stray:
            parts.append(f"not in manifest: {', '.join(stray)}")
        if absent:
            parts.append(f"no predictions for: {', '.join(absent)}")
        raise EvaluationError("image id mismatch; " + "; ".join(parts))

    wanted = set(eval_ids)
    acc = MetricAccumulator()
    for record in manifest.records:
        gt = record.load_labelmap()
        masks: dict[int, Optional[BinaryMask]] = {}
        for rec in by_image[record.image_id]:
            if rec.get("outcome") == "seg":
                if rec.get("rle") is None:
                    raise EvaluationError(f"{record.image_id}/{rec['class_id']}: seg outcome without rle")
                masks[rec["class_id"]] = rle_decode(rle_from_text(rec["rle"]), gt.width, gt.height)
            elif rec.get("outcome") not in ("neg", "unanswered"):
                raise EvaluationError(f"{record.image_id}/{rec.get('class_id')}: bad outcome {rec.get('outcome')!r}")
        if metric == "miou":
            acc.accumulate_semantic(masks, gt, eval_ids)
        else:
            for rec in by_image[record.image_id]:
                c = rec["class_id"]
                if c not in wanted:
                    continue
                pred = masks[c] if c in masks else BinaryMask.empty(gt.width, gt.height)
                acc.accumulate_referring(pred, gt.class_mask(c), class_id=c)

    if metric == "miou":
        value = acc.finalize_miou(eval_ids)
        per_class = {c: acc.class_iou(c) for c in eval_ids}
    elif metric == "ciou":
        value = acc.finalize_ciou()
        per_class = {c: (acc.class_iou(c) if acc.union.get(c) else (1.0 if acc.per_class_ious.get(c) else None))
                     for c in eval_ids}
    else:
        value = acc.finalize_giou()
        per_class = {c: (sum(v) / len(v) if (v := acc.per_class_ious.get(c)) else None) for c in eval_ids}
    out = {"metric": metric, "value": None if math.isnan(value) else value,
           "per_class": {str(c): v for c, v in per_class.items()}}
    if math.isnan(value):
        out["diagnostic"] = f"{metric} undefined: no class or sample with nonzero union"
    return out
