"""Random pixel dropout and rotation on single (h, w, c) images."""

from __future__ import annotations

import math

import numpy as np

from ..geometry import sample_bilinear


def pixel_dropout(img: np.ndarray, apply_prob: float, per_pixel_prob: float,
                  rng: np.random.Generator) -> np.ndarray:
    """With probability ``apply_prob`` zero each pixel (all channels)
    independently with probability ``per_pixel_prob``."""
    if rng.random() >= apply_prob:
        return img
    drop = rng.random(img.shape[:2]) < per_pixel_prob
    out = img.copy()
    out[drop] = 0
    return out


def rotate(img: np.ndarray, angle_deg: float, fill: float = 0.0) -> np.ndarray:
    """Rotate about the image centre (positive = counter-clockwise on screen)."""
    if angle_deg == 0:
        return img.copy()
    h, w = img.shape[:2]
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    a = math.radians(angle_deg)
    ca, sa = math.cos(a), math.sin(a)
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    du, dv = u - cx, v - cy
    # inverse map of a screen-CCW rotation (y down)
    sx = cx + ca * du - sa * dv
    sy = cy + sa * du + ca * dv
    return sample_bilinear(img, sx, sy, fill).astype(img.dtype)


def draw_angle(limit_deg: float, apply_prob: float, rng: np.random.Generator) -> float | None:
    """The rotation decision alone: None (skip) or an angle in [-limit, limit]."""
    if rng.random() >= apply_prob:
        return None
    return float(rng.uniform(-limit_deg, limit_deg))


def random_rotation(img: np.ndarray, limit_deg: float, apply_prob: float,
                    rng: np.random.Generator) -> np.ndarray:
    angle = draw_angle(limit_deg, apply_prob, rng)
    return img if angle is None else rotate(img, angle, fill=0.0)
