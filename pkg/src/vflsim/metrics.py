"""Task metrics shared by model evaluation and attack scoring."""

from __future__ import annotations

import re

import numpy as np

from .errors import ConfigError, ShapeError

_TOPK = re.compile(r"^top(\d+)$")


def parse_metric(metric: str) -> tuple[str, int]:
    """``top1`` / ``top5`` / ``topk(5)`` / ``f1_binary`` -> (kind, k)."""
    m = _TOPK.match(metric) or re.match(r"^topk\((\d+)\)$", metric)
    if m:
        k = int(m.group(1))
        if k < 1:
            raise ConfigError(f"top-k metric needs k >= 1, got {metric!r}")
        return "topk", k
    if metric in ("f1", "f1_binary"):
        return "f1", 0
    raise ConfigError(f"unknown metric {metric!r}; use top1, top<k>, topk(<k>) or f1_binary")


def f1_binary(pred, truth) -> float:
    pred = np.asarray(pred) == 1
    truth = np.asarray(truth) == 1
    tp = float(np.sum(pred & truth))
    fp = float(np.sum(pred & ~truth))
    fn = float(np.sum(~pred & truth))
    if tp == 0:
        return 0.0
    precision, recall = tp / (tp + fp), tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def score(predictions, truth, metric: str, num_classes: int | None = None) -> float:
    """Score class-index predictions or an [n, C] score matrix against ``truth``.

    Top-k with k > 1 needs the score matrix; label vectors only support k = 1.
    """
    kind, k = parse_metric(metric)
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(predictions)
    if pred.shape[0] != truth.shape[0]:
        raise ShapeError(f"{pred.shape[0]} predictions for {truth.shape[0]} labels")
    if truth.size == 0:
        raise ShapeError("cannot score an empty prediction set")
    if pred.ndim == 2:
        c = pred.shape[1]
    else:
        c = num_classes if num_classes is not None else int(max(pred.max(), truth.max())) + 1

    if kind == "f1":
        if c > 2:
            raise ConfigError(f"f1_binary requested on a {c}-class task")
        labels = pred.argmax(axis=1) if pred.ndim == 2 else pred
        return f1_binary(labels, truth)

    if pred.ndim == 1:
        if k != 1:
            raise ConfigError(f"{metric} needs a score matrix, not label predictions")
        return float(np.mean(pred.astype(np.int64) == truth))
    if k == 1:
        return float(np.mean(pred.argmax(axis=1) == truth))
    # truth counts as a hit if fewer than k classes score strictly higher
    true_scores = pred[np.arange(len(truth)), truth]
    higher = np.sum(pred > true_scores[:, None], axis=1)
    return float(np.mean(higher < k))
