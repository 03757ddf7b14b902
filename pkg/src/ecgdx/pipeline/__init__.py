"""Datasets, the two-stage curriculum, ensembling and metrics."""

from .data import (CLASSIFIER_HW, Dataset, SampleRecord, load_manifest, prepare_image, prepare_mask,
                   save_manifest, split_dataset)
from .ensemble import ensemble_logits, evaluate, predict_logits
from .metrics import MetricsReport, auroc, binarize, f1, fit_thresholds, metrics_report
from .train import fit_mask_threshold, foreground_iou, predict_mask, pseudo_label, train_segmenter, train_stage

__all__ = [
    "CLASSIFIER_HW", "Dataset", "MetricsReport", "SampleRecord", "auroc", "binarize", "ensemble_logits",
    "evaluate", "f1", "fit_mask_threshold", "fit_thresholds", "foreground_iou", "load_manifest", "metrics_report",
    "predict_logits", "predict_mask", "prepare_image", "prepare_mask", "pseudo_label", "save_manifest",
    "split_dataset", "train_segmenter", "train_stage",
]
