"""Rating-prediction and ranking metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from liberate.dataset import RatingStore


@dataclass(frozen=True)
class RankedList:
    items: np.ndarray
    relevances: np.ndarray


def rmse(truth, pred) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ValueError(f"length mismatch: {truth.shape} vs {pred.shape}")
    if truth.size == 0:
        raise ValueError("rmse of an empty list is undefined")
    d = truth - pred
    return math.sqrt(float(d @ d) / d.size)


def dcg(relevances) -> float:
    rel = np.asarray(relevances, dtype=np.float64)
    if rel.size == 0:
        raise ValueError("dcg of an empty list is undefined")
    return float(np.sum(rel / np.log2(np.arange(2, rel.size + 2))))


def ndcg(relevances) -> float:
    """DCG of the delivered order over DCG of the same relevances sorted descending.

    An all-zero list has nothing to rank and scores 1.
    """
    rel = np.asarray(relevances, dtype=np.float64)
    ideal = dcg(np.sort(rel)[::-1])
    if ideal == 0.0:
        return 1.0
    return dcg(rel) / ideal


def ranked_list(items, predicted, truth) -> RankedList:
    """Order by predicted score descending, ties by ascending item id."""
    items = np.asarray(items, dtype=np.int64)
    order = np.lexsort((items, -np.asarray(predicted, dtype=np.float64)))
    return RankedList(items[order], np.asarray(truth, dtype=np.float64)[order])


def evaluate(U, V, test: RatingStore) -> dict[str, float]:
    """RMSE over every test pair plus NDCG averaged over users with >= 2 test items."""
    truths, preds, scores = [], [], []
    for i, (items, values) in enumerate(test.by_user):
        if len(items) == 0:
            continue
        p = V[items] @ U[i]
        truths.append(values)
        preds.append(p)
        if len(items) >= 2:
            scores.append(ndcg(ranked_list(items, p, values).relevances))
    if not truths:
        raise ValueError("test store is empty")
    return {
        "rmse": rmse(np.concatenate(truths), np.concatenate(preds)),
        "mean_ndcg": float(np.mean(scores)) if scores else float("nan"),
    }
