"""Bag-level aggregation of patch scores and routing of the bag loss."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOSS_CLIP = 1e-7


class EmptyBagError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BagPrediction:
    """Aggregated score plus the patches that produced it.

    ``weights[i]`` is d(score)/d(patch_scores[contributors[i]]); the
    weights are non-negative and sum to one.
    """

    score: float
    contributors: np.ndarray
    weights: np.ndarray
    patch_scores: np.ndarray


def _scores(patch_scores) -> np.ndarray:
    s = np.asarray(patch_scores, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise EmptyBagError("cannot aggregate an empty bag")
    return s


def aggregate_max(patch_scores) -> BagPrediction:
    s = _scores(patch_scores)
    i = int(np.argmax(s))  # first maximum wins ties
    return BagPrediction(float(s[i]), np.array([i]), np.array([1.0]), s)


def aggregate_topk(patch_scores, k: int) -> BagPrediction:
    """Mean of the ``k`` best patch scores (all of them if the bag is smaller)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    s = _scores(patch_scores)
    k = min(k, len(s))
    top = np.argsort(-s, kind="stable")[:k]
    return BagPrediction(float(s[top].sum() / k), top, np.full(k, 1.0 / k), s)


def aggregator(name: str, k: int = 10):
    if name == "max":
        return aggregate_max
    if name == "topk":
        return lambda scores: aggregate_topk(scores, k)
    raise ValueError(f"unknown aggregator {name!r}")


def bag_loss_and_grads(pred: BagPrediction, label: int, clip: float = LOSS_CLIP):
    """Binary cross-entropy of the bag score and its gradient per patch.

    Only contributor patches receive a non-zero gradient. Where the clip is
    active the derivative is zero, as for any clamped quantity.
    """
    y = float(label)
    score = pred.score
    sc = min(max(score, clip), 1.0 - clip)
    loss = -(y * np.log(sc) + (1.0 - y) * np.log(1.0 - sc))
    grads = np.zeros(len(pred.patch_scores))
    if clip < score < 1.0 - clip:
        dscore = -y / sc + (1.0 - y) / (1.0 - sc)
        grads[pred.contributors] = dscore * pred.weights
    return float(loss), grads
