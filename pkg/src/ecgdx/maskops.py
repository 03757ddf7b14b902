"""Post-processing of binary segmentation masks.

Masks are plain 2-D boolean arrays (rows, cols). Labeled masks are int32
arrays of the same shape with 0 for background and 1..K for components.
"""

from __future__ import annotations

import numba
import numpy as np

from .errors import ParameterError

DEFAULT_WINDOW_H = 10
DEFAULT_MIN_AREA = 20


def sliding_window_filter(mask: np.ndarray, window_h: int = DEFAULT_WINDOW_H,
                          min_pixels: int = 1) -> np.ndarray:
    """Zero every horizontal band of ``window_h`` rows holding fewer than
    ``min_pixels`` true pixels; keep the other bands verbatim.

    Bands tile the mask from row 0; the last band may be shorter. With the
    default ``min_pixels=1`` a band survives iff it contains any signal.
    """
    if window_h < 1:
        raise ParameterError(f"window_h must be >= 1, got {window_h}")
    if min_pixels < 1:
        raise ParameterError(f"min_pixels must be >= 1, got {min_pixels}")
    mask = np.asarray(mask, dtype=bool)
    out = mask.copy()
    for top in range(0, mask.shape[0], window_h):
        band = mask[top:top + window_h]
        if np.count_nonzero(band) < min_pixels:
            out[top:top + window_h] = False
    return out


@numba.njit(cache=True)
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@numba.njit(cache=True)
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra < rb:
        parent[rb] = ra
    elif rb < ra:
        parent[ra] = rb


@numba.njit(cache=True)
def _two_pass(mask, eight):
    h, w = mask.shape
    prov = np.zeros((h, w), dtype=np.int32)
    # provisional label 0 is background; at most one new label per pixel
    parent = np.zeros(h * w + 1, dtype=np.int32)
    n = 0
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            # already-visited neighbours: W, NW, N, NE (diagonals only for 8-conn)
            best = 0
            for dy, dx in ((0, -1), (-1, -1), (-1, 0), (-1, 1)):
                if not eight and dy != 0 and dx != 0:
                    continue
                yy = y + dy
                xx = x + dx
                if yy < 0 or xx < 0 or xx >= w:
                    continue
                lab = prov[yy, xx]
                if lab == 0:
                    continue
                if best == 0:
                    best = lab
                else:
                    _union(parent, best, lab)
            if best == 0:
                n += 1
                parent[n] = n
                best = n
            prov[y, x] = best

    final = np.zeros(n + 1, dtype=np.int32)
    k = 0
    out = np.zeros((h, w), dtype=np.int32)
    for y in range(h):
        for x in range(w):
            lab = prov[y, x]
            if lab == 0:
                continue
            root = _find(parent, lab)
            if final[root] == 0:
                k += 1
                final[root] = k
            out[y, x] = final[root]
    return out


def label_components(mask: np.ndarray, connectivity: int = 8) -> np.ndarray:
    """Two-pass union-find labeling.

    Components get labels 1..K in raster-scan order of their first pixel.
    """
    if connectivity not in (4, 8):
        raise ParameterError("connectivity must be 4 or 8")
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    if mask.ndim != 2:
        raise ParameterError("mask must be 2-D")
    if mask.size == 0:
        return np.zeros(mask.shape, dtype=np.int32)
    return _two_pass(mask, connectivity == 8)


def component_areas(labels: np.ndarray) -> np.ndarray:
    """Pixel count per label; index 0 is the background count."""
    return np.bincount(labels.ravel(), minlength=int(labels.max(initial=0)) + 1)


def filter_components(labels: np.ndarray, min_area: int = DEFAULT_MIN_AREA) -> np.ndarray:
    if min_area < 0:
        raise ParameterError(f"min_area must be >= 0, got {min_area}")
    areas = component_areas(labels)
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


def clean_mask(mask: np.ndarray, window_h: int = DEFAULT_WINDOW_H,
               min_area: int = DEFAULT_MIN_AREA, min_pixels: int = 1) -> np.ndarray:
    """Window filtering followed by removal of small 8-connected components."""
    filtered = sliding_window_filter(mask, window_h, min_pixels)
    return filter_components(label_components(filtered), min_area)
