"""Report figures rendered to image files with matplotlib's Agg backend."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import CLASSES  # noqa: E402


def roc_points(scores, labels):
    """(fpr, tpr) at every distinct score threshold, from (0, 0) to (1, 1)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(s[1:] != s[:-1]), len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    npos, nneg = max(y.sum(), 1), max((~y).sum(), 1)
    return np.r_[0.0, fp / nneg], np.r_[0.0, tp / npos]


def save_roc_figure(probs, labels, path: str | os.PathLike, title: str = "ROC per class") -> None:
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(5, 5))
    for k, name in enumerate(CLASSES):
        if 0 < labels[:, k].sum() < len(labels):
            fpr, tpr = roc_points(probs[:, k], labels[:, k])
            ax.plot(fpr, tpr, label=name)
    ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_metrics_figure(report: dict, path: str | os.PathLike) -> None:
    """Per-class AUROC and F1 bars from a report dict."""
    auc = [report["per_class_auroc"][c] or 0.0 for c in CLASSES]
    f1s = [report["per_class_f1"][c] for c in CLASSES]
    x = np.arange(len(CLASSES))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, auc, 0.4, label="AUROC")
    ax.bar(x + 0.2, f1s, 0.4, label="F1")
    ax.set_xticks(x, CLASSES)
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def save_training_figure(epochs: list, path: str | os.PathLike) -> None:
    """Loss and learning rate per epoch from a training log."""
    t = [e["epoch"] for e in epochs]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(t, [e["loss"] for e in epochs], color="C0")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss", color="C0")
    ax2 = ax.twinx()
    ax2.plot(t, [e["lr"] for e in epochs], color="C1")
    ax2.set_ylabel("learning rate", color="C1")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
