"""Logit-averaging ensembles and end-to-end evaluation."""

from __future__ import annotations

import numpy as np

from ..errors import CompatibilityError, ParameterError
from ..nnkit import ModelParams, model_forward
from ..nnkit.layers import sigmoid
from .data import Dataset
from .metrics import MetricsReport, metrics_report

EVAL_BATCH = 256


def predict_logits(params: ModelParams, x: np.ndarray, batch: int = EVAL_BATCH) -> np.ndarray:
    x = np.asarray(x)
    if len(x) == 0:
        return np.zeros((0, params.arch["n_out"]))
    parts = [model_forward(params, x[i:i + batch], "eval")[0] for i in range(0, len(x), batch)]
    return np.concatenate(parts).astype(np.float64)


def check_compatible(models) -> None:
    models = list(models)
    if not models:
        raise ParameterError("an ensemble needs at least one model")
    for m in models[1:]:
        if not m.same_arch(models[0]):
            raise CompatibilityError("ensemble members have different architecture descriptors")


def ensemble_logits(models, x: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the members' logits, summed in list order."""
    models = list(models)
    check_compatible(models)
    total = predict_logits(models[0], x)
    for m in models[1:]:
        total = total + predict_logits(m, x)
    return total / len(models)


def ensemble_from_logits(member_logits) -> np.ndarray:
    """Mean of precomputed per-member logit arrays."""
    stack = [np.asarray(v, dtype=np.float64) for v in member_logits]
    if not stack:
        raise ParameterError("an ensemble needs at least one model")
    return sum(stack[1:], stack[0]) / len(stack)


def evaluate(models, data: Dataset, thresholds) -> MetricsReport:
    """Ensemble the grayscale-inverted inputs, squash with a sigmoid, then
    AUROC per class and F1 after thresholding."""
    if len(data) == 0:
        raise ParameterError("cannot evaluate an empty dataset")
    probs = sigmoid(ensemble_logits(models, data.inputs("grayscale_inverted")))
    return metrics_report(probs, data.labels, thresholds)
