"""Reference values for the joint text + mask training objective.

    total = text_ce + lambda_bce * mean(bce) + lambda_dice * mean(dice)

Means run over the ``<SEG>`` mask pairs of a sample; a sample with no masks
contributes only the text term.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_bce: float = 1.0
    lambda_dice: float = 0.5
    dice_epsilon: float = 1.0

    def __post_init__(self):
        if self.lambda_bce < 0 or self.lambda_dice < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.dice_epsilon <= 0:
            raise ValueError("dice_epsilon must be positive")


@dataclass(frozen=True)
class TokenBatch:
    probs: np.ndarray       # (T, V) per-position distributions
    targets: np.ndarray     # (T,) target token ids
    supervised: np.ndarray  # (T,) bool

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.int64)
        supervised = np.asarray(self.supervised, dtype=bool)
        if probs.ndim != 2 or targets.shape != (probs.shape[0],) or supervised.shape != targets.shape:
            raise ValueError("probs must be (T, V) with targets and supervised of length T")
        if probs.size and not np.allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("each distribution must sum to 1 within 1e-9")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "supervised", supervised)


@dataclass(frozen=True)
class MaskPair:
    pred: np.ndarray  # probabilities in [0, 1]
    gt: np.ndarray    # binary

    def __post_init__(self):
        pred = np.asarray(self.pred, dtype=np.float64)
        gt = np.asarray(self.gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
        if np.any((pred < 0) | (pred > 1)):
            raise ValueError("predicted probabilities must lie in [0, 1]")
        if np.any((gt != 0) & (gt != 1)):
            raise ValueError("ground truth must be binary")
        object.__setattr__(self, "pred", pred)
        object.__setattr__(self, "gt", gt)


def text_ce(batch: TokenBatch) -> float:
    rows = np.flatnonzero(batch.supervised)
    if rows.size == 0:
        warnings.warn("no supervised positions; text loss is 0", RuntimeWarning, stacklevel=2)
        return 0.0
    p = batch.probs[rows, batch.targets[rows]]
    return float(-np.mean(np.log(np.maximum(p, PROB_FLOOR)))) + 0.0


def bce(pair: MaskPair) -> float:
    # log arguments are floored rather than p itself, so hard 0/1 matches give exactly 0
    p, g = pair.pred, pair.gt
    ll = g * np.log(np.maximum(p, PROB_FLOOR)) + (1 - g) * np.log(np.maximum(1 - p, PROB_FLOOR))
    return float(-np.mean(ll)) + 0.0


def dice(pair: MaskPair, eps: float = 1.0) -> float:
    p, g = pair.pred, pair.gt
    return float(1.0 - (2.0 * np.sum(p * g) + eps) / (np.sum(p) + np.sum(g) + eps))


def total_loss(batch: TokenBatch, pairs: Sequence[MaskPair], w: LossWeights = LossWeights()) -> float:
    return loss_components(batch, pairs, w)["total"]


def loss_components(batch: TokenBatch, pairs: Sequence[MaskPair], w: LossWeights = LossWeights()) -> dict:
    text = text_ce(batch)
    if pairs:
        b = float(np.mean([bce(p) for p in pairs]))
        d = float(np.mean([dice(p, w.dice_epsilon) for p in pairs]))
    else:
        b = d = 0.0
    return {"text_ce": text, "bce": b, "dice": d,
            "total": text + w.lambda_bce * b + w.lambda_dice * d}


def load_fixture(path) -> tuple[TokenBatch, list[MaskPair], LossWeights]:
    """Read a loss fixture; see README for the schema."""
    doc = json.loads(Path(path).read_text())
    tok = doc["tokens"]
    probs = tok["probs"]
    batch = TokenBatch(np.asarray(probs, dtype=np.float64).reshape(len(probs), -1),
                       tok["targets"], tok.get("supervised", [True] * len(tok["targets"])))
    pairs = [MaskPair(m["pred"], m["gt"]) for m in doc.get("masks", [])]
    weights = LossWeights(**doc.get("weights", {}))
    return batch, pairs, weights
