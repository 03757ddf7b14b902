"""Training loops: the two-stage classifier curriculum and the segmenter.

Per epoch t (0-based) the learning rate is ``cosine_lr(t, cfg)``, samples
are visited in a permutation drawn from ``stream(seed, "shuffle", t)``, and
sample j is augmented with its own ``stream(seed, "augment", t, j)``: pixel
dropout first, then rotation. Gradients are summed over the batch inside
one matmul per layer, so a run is bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import numpy as np

from ..errors import CompatibilityError, DataError
from ..maskops import DEFAULT_MIN_AREA, DEFAULT_WINDOW_H, clean_mask
from ..nnkit import (ModelParams, TrainConfig, bce_grad, bce_logits, classifier_arch, cosine_lr,
                     ftl, ftl_grad, init_params, model_backward, model_forward, segmenter_arch,
                     sgd_step, stream)
from ..nnkit.augment import draw_angle, pixel_dropout, rotate
from ..raster import Raster
from .data import Dataset, gray_inverted

INPUT_KINDS = ("mask", "grayscale_inverted")
PSEUDO_LABEL_COUNT = 29
SEG_CROP = (64, 64)


def _augment(img: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    img = pixel_dropout(img, cfg.pixel_drop[0], cfg.pixel_drop[1], rng)
    angle = draw_angle(cfg.rotation[0], cfg.rotation[1], rng)
    return img if angle is None else rotate(img, angle, fill=0.0)


def fit_classifier(params: ModelParams, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                   log: list | None = None, on_epoch=None, stop_after: int | None = None) -> ModelParams:
    """SGD on mean BCE-with-logits. ``on_epoch(epoch, params)`` runs after
    each finished epoch (1-based count). ``stop_after`` ends the run early
    while keeping the full-length schedule, so the result equals a prefix of
    the complete run."""
    n = len(x)
    last = cfg.epochs if stop_after is None else min(stop_after, cfg.epochs)
    for t in range(last):
        lr = cosine_lr(t, cfg)
        order = stream(cfg.seed, "shuffle", t).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = np.stack([_augment(x[j], cfg, stream(cfg.seed, "augment", t, j)) for j in idx])
            logits, cache = model_forward(params, batch, "train")
            total += bce_logits(logits, y[idx]) * len(idx)
            grads, _ = model_backward(cache, bce_grad(logits, y[idx]))
            params = sgd_step(params, grads, lr)
        if log is not None:
            log.append({"epoch": t, "lr": lr, "loss": total / n})
        if on_epoch is not None and on_epoch(t + 1, params) is False:
            break
    return params


def train_stage(init: ModelParams | None, data: Dataset, input_kind: str, cfg: TrainConfig,
                log: list | None = None, on_epoch=None, stop_after: int | None = None) -> ModelParams:
    """One curriculum stage. ``init=None`` starts from a fresh seeded init;
    stage 1 uses ``input_kind="mask"``, stage 2 ``"grayscale_inverted"``."""
    if input_kind not in INPUT_KINDS:
        raise DataError(f"input_kind must be one of {INPUT_KINDS}")
    x = data.inputs(input_kind)
    if init is None:
        params = init_params(classifier_arch(x.shape[1:3], in_channels=x.shape[3]), cfg.seed)
    else:
        if init.arch.get("kind") != "classifier":
            raise CompatibilityError("initial weights are not a classifier")
        if list(init.arch["input_hw"]) != list(x.shape[1:3]):
            raise CompatibilityError(f"weights expect {init.arch['input_hw']} inputs, data is {x.shape[1:3]}")
        params = init.copy()
    return fit_classifier(params, x, data.labels, cfg, log, on_epoch, stop_after)


# --- segmenter -------------------------------------------------------------

def _seg_plane(img) -> np.ndarray:
    if isinstance(img, Raster):
        return gray_inverted(img)
    a = np.asarray(img, dtype=np.float64)
    return a[..., 0] if a.ndim == 3 else a


def _crop_pair(plane, mask, crop, rng):
    ch, cw = crop
    h, w = plane.shape
    if h < ch or w < cw:
        raise DataError(f"image {plane.shape} is smaller than the training crop {crop}")
    y0 = int(rng.integers(0, h - ch + 1))
    x0 = int(rng.integers(0, w - cw + 1))
    return plane[y0:y0 + ch, x0:x0 + cw], mask[y0:y0 + ch, x0:x0 + cw]


def train_segmenter(pairs, cfg: TrainConfig, crop=SEG_CROP, log: list | None = None,
                    arch: dict | None = None) -> ModelParams:
    """Fit the segmenter with the focal Tversky loss.

    ``pairs`` holds (image, mask) with the image a rectified photo (Raster)
    or an inverted grayscale plane, and the mask its trace mask. Each epoch
    draws one random ``crop`` per sample; dropout hits the image only, while
    a rotation turns image and mask together.
    """
    planes, masks = [], []
    for i, (img, mask) in enumerate(pairs):
        if mask is None:
            raise DataError(f"sample {i} has no mask")
        p = _seg_plane(img)
        m = np.asarray(mask, dtype=bool)
        if p.shape != m.shape:
            raise DataError(f"sample {i}: image {p.shape} and mask {m.shape} differ")
        planes.append(p)
        masks.append(m)
    params = init_params(arch or segmenter_arch(crop), cfg.seed)
    n = len(planes)
    for t in range(cfg.epochs):
        lr = cosine_lr(t, cfg)
        order = stream(cfg.seed, "shuffle", t).permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            xs, ys = [], []
            for j in order[start:start + cfg.batch_size]:
                rng = stream(cfg.seed, "augment", t, j)
                p, m = _crop_pair(planes[j], masks[j], crop, rng)
                p = pixel_dropout(p[..., None], cfg.pixel_drop[0], cfg.pixel_drop[1], rng)
                m = m[..., None].astype(np.float64)
                angle = draw_angle(cfg.rotation[0], cfg.rotation[1], rng)
                if angle is not None:
                    p = rotate(p, angle)
                    m = (rotate(m, angle) > 0.5).astype(np.float64)
                xs.append(p)
                ys.append(m)
            x = np.stack(xs).astype(np.float32)
            y = np.stack(ys)
            pred, cache = model_forward(params, x, "train")
            total += ftl(pred, y) * len(xs)
            grads, _ = model_backward(cache, ftl_grad(pred, y).astype(np.float32))
            params = sgd_step(params, grads, lr)
        if log is not None:
            log.append({"epoch": t, "lr": lr, "loss": total / n})
    return params


def predict_mask(params: ModelParams, img) -> np.ndarray:
    """Foreground probability map at the image's own size (zero-padded to a
    multiple of 4 for the two pooling levels, then cropped back)."""
    plane = _seg_plane(img)
    h, w = plane.shape
    ph, pw = -h % 4, -w % 4
    x = np.pad(plane, ((0, ph), (0, pw)))[None, ..., None]
    out, _ = model_forward(params, x, "eval")
    return out[0, :h, :w, 0].astype(np.float64)


def pseudo_label(params: ModelParams, unlabeled, threshold: float = 0.5,
                 window_h: int = DEFAULT_WINDOW_H, min_area: int = DEFAULT_MIN_AREA):
    """Predict, threshold and clean a mask for each image; returns
    (image, mask) pairs ready to join the mask-stage training set."""
    out = []
    for img in unlabeled:
        raw = predict_mask(params, img) > threshold
        out.append((img, clean_mask(raw, window_h=window_h, min_area=min_area)))
    return out


def foreground_iou(pred: np.ndarray, truth: np.ndarray) -> float:
    p = np.asarray(pred, dtype=bool)
    g = np.asarray(truth, dtype=bool)
    union = np.count_nonzero(p | g)
    return 1.0 if union == 0 else np.count_nonzero(p & g) / union


MASK_THRESHOLD_GRID = np.round(np.arange(1, 100) * 0.01, 2)


def fit_mask_threshold(params: ModelParams, pairs) -> float:
    """Smallest grid threshold in {0.01, ..., 0.99} maximizing the mean
    foreground IoU over (image, mask) pairs. The focal Tversky loss weighs
    misses ten times more than false alarms, so the fitted cut usually sits
    well above 0.5."""
    maps = [(predict_mask(params, img), np.asarray(mask, dtype=bool)) for img, mask in pairs]
    if not maps:
        raise DataError("need at least one (image, mask) pair")
    scores = [np.mean([foreground_iou(q > t, m) for q, m in maps]) for t in MASK_THRESHOLD_GRID]
    return float(MASK_THRESHOLD_GRID[int(np.argmax(scores))])
