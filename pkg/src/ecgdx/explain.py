"""XGrad-CAM heatmaps on the classifier's last convolutional block.

For class c with last-block activations A (after ReLU, before pooling) and
G = d logit_c / d A, channel k gets weight

    w_k = sum_i G_k[i] * A_k[i] / (sum_j A_k[j] + 1e-8)

and the map is ReLU(sum_k w_k A_k), bilinearly upsampled to the input size
and divided by its maximum (an all-zero map stays zero).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import CLASSES
from .errors import CompatibilityError, ParameterError, ShapeError
from .nnkit import ModelParams, model_forward
from .nnkit.models import last_conv_grad
from .raster import Raster, resize_array, to_grayscale

CAM_EPS = 1e-8

# heat 0 -> blue, 1/3 -> cyan, 2/3 -> yellow, 1 -> red
RAMP_STOPS = np.array([0.0, 1 / 3, 2 / 3, 1.0])
RAMP_COLORS = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class Heatmap:
    raster: Raster
    source_class: str


def _as_batch(params: ModelParams, x) -> np.ndarray:
    if params.arch.get("kind") != "classifier":
        raise CompatibilityError("XGrad-CAM needs a classifier")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    if x.ndim == 3:
        x = x[None]
    if x.shape[0] != 1 or x.shape[3] != params.arch["in_channels"]:
        raise CompatibilityError(f"expected one ({params.arch['in_channels']}-channel) image, got {x.shape}")
    return x


def activation_gradient(params: ModelParams, x, class_index: int):
    """Last-block activations A and G = d logit_c / d A, both (h', w', K)."""
    batch = _as_batch(params, x).astype(params.dtype)
    if not 0 <= class_index < params.arch["n_out"]:
        raise ParameterError(f"class_index must be in [0, {params.arch['n_out']})")
    try:
        logits, cache = model_forward(params, batch, "train")
    except ShapeError as exc:
        raise CompatibilityError(str(exc)) from exc
    onehot = np.zeros_like(logits)
    onehot[0, class_index] = 1.0
    grad = last_conv_grad(cache, onehot)
    return cache.store["last_act"][0].astype(np.float64), grad[0].astype(np.float64)


def cam_weights(act: np.ndarray, grad: np.ndarray) -> np.ndarray:
    return (grad * act).sum(axis=(0, 1)) / (act.sum(axis=(0, 1)) + CAM_EPS)


def cam_map(act: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Unnormalized map at activation resolution."""
    return np.maximum((act * cam_weights(act, grad)).sum(axis=-1), 0.0)


def xgradcam(params: ModelParams, x, class_index: int) -> Heatmap:
    act, grad = activation_gradient(params, x, class_index)
    h, w = np.asarray(x).shape[-3:-1] if np.asarray(x).ndim >= 3 else np.asarray(x).shape
    m = resize_array(cam_map(act, grad), h, w)
    peak = m.max()
    m = m / peak if peak > 0 else np.zeros_like(m)
    return Heatmap(Raster(np.clip(m, 0.0, 1.0)), CLASSES[class_index])


def ramp(heat: np.ndarray) -> np.ndarray:
    """Map values in [0, 1] to RGB along the blue-cyan-yellow-red ramp."""
    v = np.clip(np.asarray(heat, dtype=np.float64), 0.0, 1.0)
    return np.stack([np.interp(v, RAMP_STOPS, RAMP_COLORS[:, c]) for c in range(3)], axis=-1)


def overlay(base: Raster, heat, alpha: float = 0.5) -> Raster:
    """Blend the ramp-coloured heatmap over the grayscale base."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError("alpha must lie in [0, 1]")
    hm = heat.raster if isinstance(heat, Heatmap) else heat
    if (hm.height, hm.width) != (base.height, base.width):
        raise ShapeError(f"heatmap {hm.height}x{hm.width} vs base {base.height}x{base.width}")
    gray = np.repeat(to_grayscale(base).data, 3, axis=-1)
    return Raster(np.clip((1.0 - alpha) * gray + alpha * ramp(hm.plane), 0.0, 1.0))
