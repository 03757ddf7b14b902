"""Focal Tversky and BCE-with-logits losses with analytic gradients."""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError
from .layers import sigmoid

FTL_ALPHA = 1.0
FTL_BETA = 10.0
FTL_GAMMA = 0.75
FTL_EPS = 1e-6


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def tversky_index(pred, truth, alpha=FTL_ALPHA, beta=FTL_BETA, eps=FTL_EPS) -> float:
    p, g = _check(pred, truth)
    tp = np.sum(p * g)
    fp = np.sum(p * (1.0 - g))
    fn = np.sum((1.0 - p) * g)
    return float((tp + eps) / (tp + alpha * fp + beta * fn + eps))


def ftl(pred, truth, alpha=FTL_ALPHA, beta=FTL_BETA, gamma=FTL_GAMMA, eps=FTL_EPS) -> float:
    """(1 - TI) ** (1 / gamma) over all pixels of ``pred`` as one foreground class.

    ``alpha`` weighs false positives, ``beta`` false negatives.
    """
    ti = tversky_index(pred, truth, alpha, beta, eps)
    return float(max(1.0 - ti, 0.0) ** (1.0 / gamma))


def ftl_grad(pred, truth, alpha=FTL_ALPHA, beta=FTL_BETA, gamma=FTL_GAMMA, eps=FTL_EPS) -> np.ndarray:
    """d ftl / d pred, same shape as ``pred``."""
    p, g = _check(pred, truth)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    tp = np.sum(p * g)
    fp = np.sum(p * (1.0 - g))
    fn = np.sum((1.0 - p) * g)
    num = tp + eps
    den = tp + alpha * fp + beta * fn + eps
    ti = num / den
    dnum = g
    dden = g + alpha * (1.0 - g) - beta * g
    dti = (dnum * den - num * dden) / den ** 2
    one_minus = max(1.0 - ti, 0.0)
    dloss_dti = -(1.0 / gamma) * one_minus ** (1.0 / gamma - 1.0) if one_minus > 0 else 0.0
    return dloss_dti * dti


def bce_logits(logits, labels) -> float:
    """Mean binary cross-entropy on logits, in the overflow-safe form
    max(z, 0) - z*y + log(1 + exp(-|z|))."""
    z, y = _check(logits, labels)
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def bce_grad(logits, labels) -> np.ndarray:
    z, y = _check(logits, labels)
    return (sigmoid(z) - y) / z.size
