"""Synthetic ECG photographs with paired ground truth.

Each sample is a 12-lead tracing printed on grid paper in a 3x4 layout, then
"photographed": placed on a dark canvas under a random homography, with a
smooth contrast field, box blur and Gaussian sensor noise. Ground truth is
the label vector, the trace mask on the flat paper, and the exact paper
corners on the canvas.

Label-conditioned beat morphology (applied on top of a Gaussian-bump beat):

    MI    deep negative Q wave and an elevated ST segment
    STTC  inverted T wave
    CD    QRS complex stretched in time by 1.8
    HYP   QRS amplitude multiplied by 1.7
    AF    no P wave and irregular RR intervals (CV 0.38)
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import CLASSES
from .errors import ConfigError
from .geometry import Homography, rectangle_quad, solve_homography, warp_array
from .raster import Raster, mask_to_raster, resize_array, write_image

FS = 250
DURATION = 10.0
LEAD_NAMES = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
# all upright so every morphology switch reads the same way in every lead
LEAD_GAINS = np.array([0.8, 1.0, 0.7, 0.75, 0.65, 0.85, 0.7, 0.8, 0.9, 1.0, 0.95, 0.85])

CD_WIDTH = 1.8
HYP_GAIN = 1.7
AF_RR_CV = 0.38
NORMAL_RR_CV = 0.03

GRID_MINOR = 4
GRID_MAJOR = 20
COLOR_PAPER = np.array([1.0, 1.0, 1.0])
COLOR_MINOR = np.array([1.0, 0.88, 0.88])
COLOR_MAJOR = np.array([1.0, 0.72, 0.72])
COLOR_CANVAS = np.array([0.16, 0.15, 0.14])

ROWS, COLS = 3, 4
CELL_SECONDS = 1.25
WINDOW_START = 2.0
PX_PER_MV = 16.0
MARGIN_X = 8
BASELINE_FRAC = 0.62


@dataclass
class GenConfig:
    n: int = 100
    seed: int = 0
    paper_w: int = 256
    paper_h: int = 192
    canvas_w: int = 384
    canvas_h: int = 320
    max_tilt_deg: float = 15.0
    contrast_band: tuple[float, float] = (0.7, 1.3)
    noise_std: float = 0.02
    blur_radius: int = 1
    class_priors: tuple[float, ...] = (0.3, 0.3, 0.3, 0.3, 0.3)

    def __post_init__(self):
        self.contrast_band = tuple(float(v) for v in self.contrast_band)
        self.class_priors = tuple(float(v) for v in self.class_priors)
        if self.n < 0:
            raise ConfigError("n must be >= 0")
        if len(self.class_priors) != len(CLASSES) or not all(0 <= p <= 1 for p in self.class_priors):
            raise ConfigError("class_priors needs 5 probabilities")
        lo, hi = self.contrast_band
        if not 0 < lo <= hi:
            raise ConfigError("contrast_band must satisfy 0 < low <= high")
        if self.noise_std < 0 or self.blur_radius < 0 or self.max_tilt_deg < 0:
            raise ConfigError("noise_std, blur_radius and max_tilt_deg must be >= 0")
        if self.paper_w < COLS * 8 + 2 * MARGIN_X or self.paper_h < ROWS * 24:
            raise ConfigError("paper too small for the 3x4 lead layout")
        bw, bh = _placement_extent(self)
        if bw + 4 > self.canvas_w or bh + 4 > self.canvas_h:
            raise ConfigError("paper does not fit the canvas at max tilt")


def _jitter_px(cfg: GenConfig) -> float:
    return min(6.0, 0.4 * cfg.max_tilt_deg)


def _placement_extent(cfg: GenConfig) -> tuple[float, float]:
    t = math.radians(cfg.max_tilt_deg)
    j = 2 * _jitter_px(cfg)
    w = cfg.paper_w * math.cos(t) + cfg.paper_h * math.sin(t) + j
    h = cfg.paper_w * math.sin(t) + cfg.paper_h * math.cos(t) + j
    return w, h


@dataclass
class Waveforms:
    leads: np.ndarray          # (12, samples) in mV
    fs: int
    beat_times: np.ndarray     # R-peak times in seconds
    template: dict


@dataclass
class GroundTruth:
    labels: np.ndarray
    mask: np.ndarray
    corners: np.ndarray
    paper_region: np.ndarray


@dataclass
class Sample:
    id: str
    canvas: Raster
    paper: Raster
    truth: GroundTruth
    waveforms: Waveforms = field(repr=False)


def beat_template(labels, t_amp: float = 1.0) -> dict:
    """Gaussian bumps (centre offset from R in s, sigma in s, amplitude in mV)
    plus ST-segment offset for one beat with the given labels."""
    mi, sttc, cd, hyp, af = (bool(v) for v in labels)
    qrs_t = CD_WIDTH if cd else 1.0
    qrs_a = HYP_GAIN if hyp else 1.0
    tpl = {
        "P": (-0.17, 0.022, 0.0 if af else 0.15),
        "Q": (-0.035 * qrs_t, 0.010 * qrs_t, (-0.45 if mi else -0.12) * qrs_a),
        "R": (0.0, 0.020 * qrs_t, 1.0 * qrs_a),
        "S": (0.040 * qrs_t, 0.012 * qrs_t, -0.25 * qrs_a),
        "T": (0.30, 0.05, (-0.30 if sttc else 0.30) * t_amp),
        "ST": 0.25 if mi else 0.0,
    }
    return tpl


def _st_profile(t: np.ndarray) -> np.ndarray:
    rise = 1.0 / (1.0 + np.exp(-(t - 0.07) / 0.01))
    fall = 1.0 / (1.0 + np.exp(-(t - 0.22) / 0.02))
    return rise - fall


def gen_waveforms(labels, rng: np.random.Generator) -> Waveforms:
    """12 synthetic leads for ``DURATION`` seconds at ``FS`` Hz.

    Every random draw happens regardless of the labels, so two label vectors
    with the same generator state share heart rate, jitter and noise.
    """
    labels = np.asarray(labels, dtype=np.int64)
    af = bool(labels[4])
    hr = rng.uniform(60.0, 90.0)
    mean_rr = 60.0 / hr
    n_iv = int(math.ceil((DURATION + 2.0) / mean_rr)) + 4
    z = rng.standard_normal(64)[:n_iv]
    scale = rng.uniform(0.85, 1.15)
    t_amp = rng.uniform(0.85, 1.15)
    lead_jitter = rng.uniform(0.9, 1.1, size=12)
    wander = rng.uniform(0.0, 0.05, size=12)
    wander_f = rng.uniform(0.1, 0.4)
    wander_ph = rng.uniform(0.0, 2 * math.pi, size=12)
    first = rng.uniform(0.0, mean_rr)
    noise = rng.standard_normal((12, int(DURATION * FS))) * 0.008

    if af:
        zs = (z - z.mean()) / z.std()
        rr = mean_rr * (1.0 + AF_RR_CV * zs)
    else:
        rr = mean_rr * (1.0 + NORMAL_RR_CV * z)
    rr = np.maximum(rr, 0.3 * mean_rr)
    beats = -1.0 + first + np.concatenate([[0.0], np.cumsum(rr)])
    beats = beats[beats < DURATION + 1.0]

    tpl = beat_template(labels, t_amp)
    t = np.arange(int(DURATION * FS)) / FS
    beat = np.zeros_like(t)
    for r in beats:
        d = t - r
        near = np.abs(d) < 0.7
        dd = d[near]
        acc = tpl["ST"] * _st_profile(dd)
        for key in ("P", "Q", "R", "S", "T"):
            c, s, a = tpl[key]
            if a != 0.0:
                acc = acc + a * np.exp(-0.5 * ((dd - c) / s) ** 2)
        beat[near] += acc
    gains = LEAD_GAINS * lead_jitter * scale
    leads = gains[:, None] * beat[None, :]
    leads += wander[:, None] * np.sin(2 * math.pi * wander_f * t[None, :] + wander_ph[:, None])
    leads += noise
    return Waveforms(leads=leads, fs=FS, beat_times=beats, template=tpl)


@numba.njit(cache=True)
def _stroke_distance(xs, ys, h, w):
    dist = np.full((h, w), 1e9)
    for s in range(len(xs) - 1):
        ax, ay, bx, by = xs[s], ys[s], xs[s + 1], ys[s + 1]
        x0 = max(int(math.floor(min(ax, bx) - 1.5)), 0)
        x1 = min(int(math.ceil(max(ax, bx) + 1.5)), w - 1)
        y0 = max(int(math.floor(min(ay, by) - 1.5)), 0)
        y1 = min(int(math.ceil(max(ay, by) + 1.5)), h - 1)
        dx, dy = bx - ax, by - ay
        ll = dx * dx + dy * dy
        for py in range(y0, y1 + 1):
            for px in range(x0, x1 + 1):
                if ll > 0:
                    u = ((px - ax) * dx + (py - ay) * dy) / ll
                    u = min(max(u, 0.0), 1.0)
                else:
                    u = 0.0
                qx = ax + u * dx - px
                qy = ay + u * dy - py
                d = math.sqrt(qx * qx + qy * qy)
                if d < dist[py, px]:
                    dist[py, px] = d
    return dist


def grid_paper(width: int, height: int) -> np.ndarray:
    img = np.empty((height, width, 3))
    img[:] = COLOR_PAPER
    xs, ys = np.arange(width), np.arange(height)
    img[:, xs % GRID_MINOR == 0] = COLOR_MINOR
    img[ys % GRID_MINOR == 0, :] = COLOR_MINOR
    img[:, xs % GRID_MAJOR == 0] = COLOR_MAJOR
    img[ys % GRID_MAJOR == 0, :] = COLOR_MAJOR
    return img


def lead_layout(cfg: GenConfig):
    """Per lead: (row, col, x_left, baseline_y, window_start_s)."""
    cell_w = (cfg.paper_w - 2 * MARGIN_X) / COLS
    cell_h = cfg.paper_h / ROWS
    out = []
    for col in range(COLS):
        for row in range(ROWS):
            out.append((row, col, MARGIN_X + col * cell_w, row * cell_h + BASELINE_FRAC * cell_h,
                        WINDOW_START + col * CELL_SECONDS))
    return out, cell_w


def render_paper(waves: Waveforms, cfg: GenConfig, rng: np.random.Generator):
    """Grid paper with 12 anti-aliased 1-px traces; mask = ink coverage > 0.5."""
    w, h = cfg.paper_w, cfg.paper_h
    ink = np.full(3, rng.uniform(0.02, 0.12))
    ink[2] += 0.05
    layout, cell_w = lead_layout(cfg)
    px_per_s = (cell_w - 2) / CELL_SECONDS
    dist = np.full((h, w), 1e9)
    for lead, (row, col, x_left, base_y, t0) in enumerate(layout):
        i0 = int(round(t0 * waves.fs))
        i1 = int(round((t0 + CELL_SECONDS) * waves.fs))
        seg = waves.leads[lead, i0:i1 + 1]
        xs = x_left + 1 + np.arange(len(seg)) / waves.fs * px_per_s
        ys = base_y - seg * PX_PER_MV
        dist = np.minimum(dist, _stroke_distance(xs, ys, h, w))
    coverage = np.clip(1.0 - dist, 0.0, 1.0)
    mask = coverage > 0.5
    paper = grid_paper(w, h)
    paper = paper * (1.0 - coverage[..., None]) + ink * coverage[..., None]
    return Raster(np.clip(paper, 0.0, 1.0)), mask


def box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    if radius <= 0:
        return img
    k = 2 * radius + 1
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (radius + 1, radius)
        p = np.pad(out, pad, mode="edge")
        c = np.cumsum(p, axis=axis)
        n = out.shape[axis]
        hi = np.take(c, np.arange(k, k + n), axis=axis)
        lo = np.take(c, np.arange(0, n), axis=axis)
        out = (hi - lo) / k
    return out


def placement(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    """Canvas corners of the sheet (Quad order). Zero tilt gives a pure
    integer translation."""
    pw, ph, cw, ch = cfg.paper_w, cfg.paper_h, cfg.canvas_w, cfg.canvas_h
    theta = math.radians(rng.uniform(-cfg.max_tilt_deg, cfg.max_tilt_deg))
    shrink = rng.uniform(0.9, 1.0)
    jit = _jitter_px(cfg)
    jitter = rng.uniform(-jit, jit, size=(4, 2))
    bw, bh = _placement_extent(cfg)
    sx = int(max(0, min(8, (cw - bw) // 2 - 2)))
    sy = int(max(0, min(8, (ch - bh) // 2 - 2)))
    off = np.array([rng.integers(-sx, sx + 1), rng.integers(-sy, sy + 1)], dtype=np.float64)
    base = rectangle_quad(pw, ph)
    shift = np.array([(cw - pw) // 2, (ch - ph) // 2], dtype=np.float64) + off
    if cfg.max_tilt_deg == 0:
        return base + shift
    centre = np.array([(pw - 1) / 2.0, (ph - 1) / 2.0])
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    return (base - centre) @ rot.T * shrink + centre + shift + jitter


def photograph(paper: Raster, cfg: GenConfig, rng: np.random.Generator):
    """Place the sheet on a dark canvas; returns (canvas, corners, homography)."""
    corners = placement(cfg, rng)
    if cfg.max_tilt_deg == 0:
        dx, dy = corners[0] - rectangle_quad(paper.width, paper.height)[0]
        hom = Homography(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]]))
    else:
        hom = solve_homography(rectangle_quad(paper.width, paper.height), corners)
    lo, hi = cfg.contrast_band
    field_vals = rng.uniform(lo, hi, size=(3, 3))
    cw, ch = cfg.canvas_w, cfg.canvas_h

    # pixels in the outer half-pixel band of the sheet take its edge value
    warped = warp_array(paper.data, hom, cw, ch, fill=np.nan, pad=0.5)
    inside = ~np.isnan(warped[..., 0])
    canvas = np.where(inside[..., None], warped, COLOR_CANVAS)

    contrast = resize_array(field_vals, ch, cw)
    canvas = np.clip(canvas * contrast[..., None], 0.0, 1.0)
    canvas = box_blur(canvas, cfg.blur_radius)
    if cfg.noise_std > 0:
        canvas = canvas + rng.normal(0.0, cfg.noise_std, size=canvas.shape)
    return Raster(np.clip(canvas, 0.0, 1.0)), corners, hom


def sample_rng(seed: int, index: int) -> np.random.Generator:
    """Per-sample stream: PCG64 seeded from the (seed, index) entropy pair."""
    return np.random.default_rng([int(seed), int(index)])


def _draw_labels(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(len(CLASSES)) < np.array(cfg.class_priors)).astype(np.int64)


def sample_labels(cfg: GenConfig, index: int) -> np.ndarray:
    """The label vector ``generate_sample(cfg, index)`` will carry, without rendering."""
    return _draw_labels(cfg, sample_rng(cfg.seed, index))


def generate_sample(cfg: GenConfig, index: int) -> Sample:
    rng = sample_rng(cfg.seed, index)
    labels = _draw_labels(cfg, rng)
    waves = gen_waveforms(labels, rng)
    paper, mask = render_paper(waves, cfg, rng)
    canvas, corners, _ = photograph(paper, cfg, rng)
    truth = GroundTruth(labels=labels, mask=mask, corners=corners, paper_region=corners.copy())
    return Sample(id=f"s{index:05d}", canvas=canvas, paper=paper, truth=truth, waveforms=waves)


def labels_to_dict(labels) -> dict:
    return {name: int(v) for name, v in zip(CLASSES, labels)}


def gen_dataset(cfg: GenConfig, out_dir: str | os.PathLike) -> Path:
    """Write canvases (PPM), trace masks (PGM) and ``manifest.json``.

    Paths in the manifest are relative to ``out_dir``. Returns the manifest path.
    """
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(cfg.n):
        s = generate_sample(cfg, i)
        img_rel = f"images/{s.id}.ppm"
        mask_rel = f"masks/{s.id}.pgm"
        write_image(s.canvas, out / img_rel)
        write_image(mask_to_raster(s.truth.mask), out / mask_rel)
        records.append({
            "id": s.id,
            "image": img_rel,
            "mask": mask_rel,
            "labels": labels_to_dict(s.truth.labels),
            "corners": [[round(float(x), 6), round(float(y), 6)] for x, y in s.truth.corners],
        })
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(records, indent=1, sort_keys=True) + "\n")
    return manifest


def config_dict(cfg: GenConfig) -> dict:
    d = asdict(cfg)
    d["contrast_band"] = list(cfg.contrast_band)
    d["class_priors"] = list(cfg.class_priors)
    return d
