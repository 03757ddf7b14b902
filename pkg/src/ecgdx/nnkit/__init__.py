"""Minimal numpy neural toolkit: compact models, losses, SGD, augmentation."""

from .augment import pixel_dropout, random_rotation, rotate
from .losses import bce_grad, bce_logits, ftl, ftl_grad, tversky_index
from .models import (Cache, ModelParams, classifier_arch, init_params, model_backward,
                     model_forward, segmenter_arch)
from .optim import ENSEMBLE_ROWS, TrainConfig, cosine_lr, sgd_step
from .rng import stream
from .weights import load_weights, save_weights

__all__ = [
    "Cache", "ModelParams", "ENSEMBLE_ROWS", "TrainConfig", "bce_grad", "bce_logits", "classifier_arch",
    "cosine_lr", "ftl", "ftl_grad", "init_params", "load_weights", "model_backward", "model_forward",
    "pixel_dropout", "random_rotation", "rotate", "save_weights", "segmenter_arch", "sgd_step",
    "stream", "tversky_index",
]
