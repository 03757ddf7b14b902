"""Image container, binary PGM/PPM I/O, and intensity operations."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import maskops
from .errors import FormatError, ImageIOError, ParameterError, SegmentationError

# integer weights over 1000 keep white exactly 1.0
LUMA_PERMILLE = np.array([299.0, 587.0, 114.0])


@dataclass(frozen=True, eq=False)
class Raster:
    """Row-major image with 1 or 3 channels and values in [0, 1].

    ``data`` is always stored as a read-only float64 array of shape
    (height, width, channels).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ParameterError(f"raster must be (h, w, 1|3), got shape {arr.shape}")
        if arr.size and not (np.all(arr >= 0.0) and np.all(arr <= 1.0)):
            raise ParameterError("raster values must lie in [0, 1]")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def plane(self) -> np.ndarray:
        """The single channel of a grayscale raster as a 2-D array."""
        if self.channels != 1:
            raise ParameterError("plane is only defined for 1-channel rasters")
        return self.data[:, :, 0]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    __hash__ = None


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to bytes with round-half-up."""
    return np.clip(np.floor(np.asarray(values) * 255.0 + 0.5), 0, 255).astype(np.uint8)


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        c = buf[pos:pos + 1]
        if c == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise FormatError("truncated header")
    return buf[start:pos], pos


def read_image(path: str | os.PathLike) -> Raster:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, pos = _read_token(buf, 0)
    if magic not in (b"P5", b"P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r}")
    try:
        width, pos = _read_token(buf, pos)
        height, pos = _read_token(buf, pos)
        maxval, pos = _read_token(buf, pos)
        width, height, maxval = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header") from exc
    if maxval != 255 or width < 1 or height < 1:
        raise FormatError(f"{path}: need maxval 255 and positive dims")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise ImageIOError(f"{path}: missing payload")
    pos += 1
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = buf[pos:pos + need]
    if len(payload) < need:
        raise ImageIOError(f"{path}: payload truncated ({len(payload)} of {need} bytes)")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return Raster(arr / 255.0)


def write_image(r: Raster, path: str | os.PathLike) -> None:
    magic = b"P5" if r.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (r.width, r.height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(quantize(r.data).tobytes())


def mask_to_raster(mask: np.ndarray) -> Raster:
    return Raster(np.asarray(mask, dtype=np.float64))


def raster_to_mask(r: Raster) -> np.ndarray:
    return to_grayscale(r).plane >= 0.5


def to_grayscale(r: Raster) -> Raster:
    if r.channels == 1:
        return r
    luma = np.clip((r.data @ LUMA_PERMILLE) / 1000.0, 0.0, 1.0)
    return Raster(luma)


def invert(r: Raster) -> Raster:
    return Raster(1.0 - r.data)


def _bins(plane: np.ndarray) -> np.ndarray:
    return quantize(plane).astype(np.intp)


def _tile_edges(size: int, tiles: int) -> np.ndarray:
    step = size // tiles
    return np.array([i * step for i in range(tiles)] + [size])


def _clipped_lut(bins: np.ndarray, clip_limit: float) -> np.ndarray:
    hist = np.bincount(bins.ravel(), minlength=256).astype(np.float64)
    n = hist.sum()
    if math.isfinite(clip_limit):
        limit = clip_limit * n / 256.0
        excess = np.maximum(hist - limit, 0.0).sum()
        hist = np.minimum(hist, limit) + excess / 256.0
    return np.minimum(np.cumsum(hist) / n, 1.0)


def _axis_weights(size: int, centers: np.ndarray):
    """Index of the lower/upper neighbouring tile centre and blend weight."""
    pos = np.arange(size, dtype=np.float64)
    hi = np.searchsorted(centers, pos, side="right")
    lo = np.clip(hi - 1, 0, len(centers) - 1)
    hi = np.clip(hi, 0, len(centers) - 1)
    span = centers[hi] - centers[lo]
    wt = np.where(span > 0, (pos - centers[lo]) / np.where(span > 0, span, 1.0), 0.0)
    return lo, hi, np.clip(wt, 0.0, 1.0)


def clahe(r: Raster, tiles_x: int = 8, tiles_y: int = 8, clip_limit: float = 2.0) -> Raster:
    """Contrast limited adaptive histogram equalization of a grayscale raster.

    Each tile gets a 256-bin histogram clipped at ``clip_limit`` times the
    uniform bin height, with the excess spread evenly over all bins. Pixels
    blend the four nearest tile mappings bilinearly between tile centres.
    """
    if r.channels != 1:
        raise ParameterError("clahe expects a 1-channel raster")
    if clip_limit <= 0:
        raise ParameterError("clip_limit must be positive")
    h, w = r.height, r.width
    if not (1 <= tiles_x <= w and 1 <= tiles_y <= h):
        raise ParameterError(f"{tiles_x}x{tiles_y} tiles do not fit a {w}x{h} image")
    bins = _bins(r.plane)
    ye, xe = _tile_edges(h, tiles_y), _tile_edges(w, tiles_x)
    luts = np.empty((tiles_y, tiles_x, 256))
    for i in range(tiles_y):
        for j in range(tiles_x):
            luts[i, j] = _clipped_lut(bins[ye[i]:ye[i + 1], xe[j]:xe[j + 1]], clip_limit)

    cy = (ye[:-1] + ye[1:] - 1) / 2.0
    cx = (xe[:-1] + xe[1:] - 1) / 2.0
    y0, y1, wy = _axis_weights(h, cy)
    x0, x1, wx = _axis_weights(w, cx)
    Y0, Y1, WY = y0[:, None], y1[:, None], wy[:, None]
    X0, X1, WX = x0[None, :], x1[None, :], wx[None, :]
    tl = luts[Y0, X0, bins]
    tr = luts[Y0, X1, bins]
    bl = luts[Y1, X0, bins]
    br = luts[Y1, X1, bins]
    top = tl + WX * (tr - tl)
    bot = bl + WX * (br - bl)
    out = top + WY * (bot - top)
    return Raster(np.clip(out, 0.0, 1.0))


def otsu_threshold(plane: np.ndarray) -> int:
    """Bin index t maximizing between-class variance of {<= t} vs {> t}."""
    hist = np.bincount(_bins(plane).ravel(), minlength=256).astype(np.float64)
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * levels)
    m0 = np.divide(s0, w0, out=np.zeros(256), where=w0 > 0)
    m1 = np.divide(s0[-1] - s0, w1, out=np.zeros(256), where=w1 > 0)
    between = w0 * w1 * (m0 - m1) ** 2
    return int(np.argmax(between))


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Set every false region not 4-connected to the border to true."""
    labels = maskops.label_components(~mask, connectivity=4)
    border = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    outside = np.isin(labels, border[border > 0])
    return ~outside


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels = maskops.label_components(mask)
    areas = maskops.component_areas(labels)
    if len(areas) < 2:
        raise SegmentationError("no foreground component")
    keep = int(np.argmax(areas[1:])) + 1
    return labels == keep


def segment_background(r: Raster) -> np.ndarray:
    """Estimate the bright paper region: Otsu on luma, largest 8-connected
    bright component, then hole filling."""
    plane = to_grayscale(r).plane
    t = otsu_threshold(plane)
    fg = _bins(plane) > t
    if not fg.any():
        raise SegmentationError("empty foreground after thresholding")
    return fill_holes(largest_component(fg))


def resize(r: Raster, out_h: int, out_w: int) -> Raster:
    """Bilinear resize with half-pixel centres (a 2x reduction averages 2x2 blocks)."""
    return Raster(resize_array(r.data, out_h, out_w))


def resize_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape[:2]
    if (h, w) == (out_h, out_w):
        return np.array(arr, copy=True)

    def axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    y0, y1, wy = axis(h, out_h)
    x0, x1, wx = axis(w, out_w)
    extra = (None,) * (arr.ndim - 2)
    wx = wx[(None, slice(None)) + extra]
    wy = wy[(slice(None), None) + extra]
    rows0, rows1 = arr[y0], arr[y1]
    top = rows0[:, x0] + wx * (rows0[:, x1] - rows0[:, x0])
    bot = rows1[:, x0] + wx * (rows1[:, x1] - rows1[:, x0])
    return top + wy * (bot - top)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix; row i averages the source span [i*s, (i+1)*s)."""
    s = n_in / n_out
    lo = np.arange(n_out)[:, None] * s
    src = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(lo + s, src + 1) - np.maximum(lo, src), 0.0, None)
    return overlap / s


def resize_area(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Box-filter resampling: each output pixel is the area-weighted mean of
    the source pixels it covers. Thin strokes survive reduction (unlike point
    sampling), and an integer factor k averages exact k x k blocks."""
    h, w = arr.shape[:2]
    if (h, w) == (out_h, out_w):
        return np.array(arr, dtype=np.float64, copy=True)
    a = _area_weights(h, out_h)
    b = _area_weights(w, out_w)
    x = np.asarray(arr, dtype=np.float64)
    rows = np.tensordot(a, x, axes=(1, 0))
    return np.moveaxis(np.tensordot(b, rows, axes=(1, 1)), 0, 1)
