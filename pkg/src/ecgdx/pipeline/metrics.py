"""AUROC, F1, threshold fitting and the metrics report."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .. import CLASSES
from ..errors import ParameterError, ShapeError, UndefinedMetricError

THRESHOLD_GRID = np.round(np.arange(101) * 0.01, 2)


def auroc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,
    ties counting one half (Mann-Whitney U over average ranks)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ShapeError("scores and labels differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    # average rank over each run of tied scores
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    avg = (starts + ends + 1) / 2.0
    ranks[order] = np.repeat(avg, ends - starts)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def f1(preds, labels) -> float:
    """2TP / (2TP + FP + FN), and 0 when nothing is predicted or present."""
    p = np.asarray(preds).ravel().astype(bool)
    y = np.asarray(labels).ravel().astype(bool)
    if p.shape != y.shape:
        raise ShapeError("preds and labels differ in length")
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    den = 2 * tp + fp + fn
    return 0.0 if den == 0 else 2 * tp / den


def binarize(probs, thresholds) -> np.ndarray:
    """1 where prob > threshold (strict), per class."""
    return (np.asarray(probs) > np.asarray(thresholds)).astype(np.int64)


def fit_thresholds(probs, labels) -> np.ndarray:
    """Per class, the smallest grid threshold in {0.00, ..., 1.00} that
    maximizes F1 on the given data."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels)
    if p.size == 0 or p.shape != y.shape:
        raise ParameterError("need non-empty, aligned probability and label arrays")
    p = p.reshape(-1, p.shape[-1])
    y = y.reshape(p.shape)
    out = np.zeros(p.shape[1])
    for k in range(p.shape[1]):
        scores = [f1(p[:, k] > t, y[:, k]) for t in THRESHOLD_GRID]
        out[k] = THRESHOLD_GRID[int(np.argmax(scores))]
    return out


@dataclass
class MetricsReport:
    macro_auroc: float | None
    per_class_auroc: list
    macro_f1: float
    per_class_f1: list
    thresholds: list
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "classes": list(CLASSES),
            "macro_auroc": self.macro_auroc,
            "per_class_auroc": dict(zip(CLASSES, self.per_class_auroc)),
            "macro_f1": self.macro_f1,
            "per_class_f1": dict(zip(CLASSES, self.per_class_f1)),
            "thresholds": dict(zip(CLASSES, self.thresholds)),
            "n_samples": self.n_samples,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)


def metrics_report(probs, labels, thresholds) -> MetricsReport:
    """Per-class AUROC on the scores and F1 after binarizing. Classes with a
    single label value get AUROC None and are left out of the macro mean."""
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    t = np.asarray(thresholds, dtype=np.float64)
    if p.ndim != 2 or p.shape != y.shape or p.shape[1] != len(CLASSES):
        raise ShapeError("probs and labels must both be (n, 5)")
    if len(p) == 0:
        raise ParameterError("cannot evaluate an empty dataset")
    aucs = []
    for k, name in enumerate(CLASSES):
        try:
            aucs.append(auroc(p[:, k], y[:, k]))
        except UndefinedMetricError:
            warnings.warn(f"AUROC undefined for {name}: only one label value present", stacklevel=2)
            aucs.append(None)
    defined = [a for a in aucs if a is not None]
    pred = binarize(p, t)
    f1s = [f1(pred[:, k], y[:, k]) for k in range(len(CLASSES))]
    return MetricsReport(
        macro_auroc=float(np.mean(defined)) if defined else None,
        per_class_auroc=aucs,
        macro_f1=float(np.mean(f1s)),
        per_class_f1=f1s,
        thresholds=[float(v) for v in t],
        n_samples=int(len(p)),
    )


def thresholds_to_dict(t) -> dict:
    return {name: float(v) for name, v in zip(CLASSES, t)}


def thresholds_from_dict(d: dict) -> np.ndarray:
    if set(d) != set(CLASSES):
        raise ParameterError(f"threshold file must have exactly the keys {CLASSES}")
    t = np.array([float(d[name]) for name in CLASSES])
    if not np.all((t >= 0) & (t <= 1)):
        raise ParameterError("thresholds must lie in [0, 1]")
    return t
