"""Paper boundary geometry and perspective rectification.

Coordinates are (x, y) in pixels with y pointing down. Pixel (col, row) has
its centre at (col, row), so an image of width W spans [-0.5, W - 0.5].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import DegeneracyError, HorizonError, ParameterError
from .raster import Raster, clahe, segment_background, to_grayscale

_EPS_DEN = 1e-12


@dataclass(frozen=True, eq=False)
class Homography:
    """3x3 projective map normalized so that h[2, 2] == 1."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise ParameterError("homography must be a finite 3x3 matrix")
        if abs(m[2, 2]) <= _EPS_DEN:
            raise HorizonError("cannot normalize: h33 vanishes")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise DegeneracyError("homography is singular")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        m = self.matrix
        # adjugate keeps integer-valued inverses (pure translations) exact
        adj = np.array([
            [m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1], m[0, 2] * m[2, 1] - m[0, 1] * m[2, 2],
             m[0, 1] * m[1, 2] - m[0, 2] * m[1, 1]],
            [m[1, 2] * m[2, 0] - m[1, 0] * m[2, 2], m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0],
             m[0, 2] * m[1, 0] - m[0, 0] * m[1, 2]],
            [m[1, 0] * m[2, 1] - m[1, 1] * m[2, 0], m[0, 1] * m[2, 0] - m[0, 0] * m[2, 1],
             m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]],
        ])
        return Homography(adj)

    def __matmul__(self, other: "Homography") -> "Homography":
        """Composition: (self @ other) applies ``other`` first."""
        return Homography(self.matrix @ other.matrix)


def apply_homography(h: Homography, p) -> np.ndarray:
    """Map point(s) of shape (..., 2) through ``h`` with homogeneous division."""
    p = np.asarray(p, dtype=np.float64)
    m = h.matrix
    x, y = p[..., 0], p[..., 1]
    den = m[2, 0] * x + m[2, 1] * y + 1.0
    if np.any(np.abs(den) <= _EPS_DEN):
        raise HorizonError("point maps to infinity")
    xp = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / den
    yp = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / den
    return np.stack([xp, yp], axis=-1)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise in the mathematical sense
    (positive shoelace area), collinear vertices dropped."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    uniq = sorted(set(map(tuple, pts.tolist())))
    if len(uniq) < 3:
        raise DegeneracyError("need at least 3 distinct points")

    def chain(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = chain(uniq)
    upper = chain(reversed(uniq))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise DegeneracyError("points are collinear")
    return np.array(hull)


def polygon_area(poly) -> float:
    """Signed shoelace area (positive for counter-clockwise in math axes)."""
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def order_quad(corners) -> np.ndarray:
    """Order 4 points as top-left, top-right, bottom-right, bottom-left.

    Points are sorted by angle about their centroid (clockwise on screen,
    since y points down), then rotated to start at the smallest x + y.
    """
    c = np.asarray(corners, dtype=np.float64).reshape(4, 2)
    centre = c.mean(axis=0)
    ang = np.arctan2(c[:, 1] - centre[1], c[:, 0] - centre[0])
    c = c[np.argsort(ang, kind="stable")]
    start = int(np.argmin(c[:, 0] + c[:, 1]))
    return np.roll(c, -start, axis=0)


def max_area_quad_indices(hull) -> tuple[int, int, int, int]:
    """Indices i<j<k<l of the hull vertices spanning the largest quadrilateral.

    Every 4-subset of a convex polygon, taken in index order, is a convex
    quadrilateral with diagonal (i, k), so its area is tri(i,j,k) + tri(i,k,l)
    and the search over j and l separates. Ties (within a relative 1e-12)
    resolve to the lexicographically smallest index tuple.
    """
    p = np.asarray(hull, dtype=np.float64)
    h = len(p)
    if h < 4:
        raise DegeneracyError("hull needs at least 4 vertices")
    if h == 4:
        return (0, 1, 2, 3)
    x, y = p[:, 0], p[:, 1]
    best_area = -np.inf
    cands: list[tuple[float, tuple[int, int, int, int]]] = []
    idx = np.arange(h)
    for i in range(h - 3):
        # tri[j, k] = doubled area of (i, j, k), positive for j < k on a CCW hull
        dx, dy = x - x[i], y - y[i]
        tri = np.abs(dx[:, None] * dy[None, :] - dy[:, None] * dx[None, :]) * 0.5
        # left[k]: best j in (i, k); right[k]: best l in (k, h)
        jmask = (idx[:, None] > i) & (idx[:, None] < idx[None, :])
        left = np.where(jmask, tri, -np.inf)
        lmask = idx[None, :] > idx[:, None]
        right = np.where(lmask, tri, -np.inf)
        lbest = left.max(axis=0)
        rbest = right.max(axis=1)
        total = lbest + rbest
        total[: i + 2] = -np.inf
        total[h - 1:] = -np.inf
        kmax = float(total.max())
        if kmax > best_area:
            best_area = kmax
        tol = 1e-12 * max(abs(kmax), 1.0)
        for k in np.nonzero(total >= kmax - tol)[0]:
            j = int(np.argmax(left[:, k] >= lbest[k] - tol))
            l = int(np.argmax(right[k, :] >= rbest[k] - tol))
            cands.append((float(total[k]), (i, j, int(k), l)))
    tol = 1e-12 * max(abs(best_area), 1.0)
    return min(t for a, t in cands if a >= best_area - tol)


def simplify_to_quad(hull) -> np.ndarray:
    """Largest-area quadrilateral on the hull vertices, in Quad order."""
    p = np.asarray(hull, dtype=np.float64)
    sel = p[list(max_area_quad_indices(p))]
    quad = order_quad(sel)
    if abs(polygon_area(quad)) <= 0:
        raise DegeneracyError("quadrilateral has zero area")
    return quad


def _solve_partial_pivot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64, copy=True)
    b = b.astype(np.float64, copy=True)
    n = len(b)
    scale = np.abs(a).max()
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) <= 1e-12 * scale:
            raise DegeneracyError("singular correspondence system")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        f = a[col + 1:, col] / a[col, col]
        a[col + 1:, col:] -= f[:, None] * a[col, col:]
        b[col + 1:] -= f * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1:] @ x[row + 1:]) / a[row, row]
    return x


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    s = np.sqrt(2.0) / max(np.mean(np.linalg.norm(pts - c, axis=1)), 1e-300)
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def solve_homography(src, dst) -> Homography:
    """Exact 4-point homography with h33 = 1 from an 8x8 linear system.

    Points are similarity-normalized first for conditioning; the system is
    solved by Gaussian elimination with partial pivoting.
    """
    s = np.asarray(src, dtype=np.float64).reshape(4, 2)
    d = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    ts, td = _normalizer(s), _normalizer(d)
    sn = s @ ts[:2, :2].T + ts[:2, 2]
    dn = d @ td[:2, :2].T + td[:2, 2]
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for n, ((x, y), (u, v)) in enumerate(zip(sn, dn)):
        a[2 * n] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * n + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * n], b[2 * n + 1] = u, v
    hv = _solve_partial_pivot(a, b)
    hn = np.append(hv, 1.0).reshape(3, 3)
    m = np.linalg.inv(td) @ hn @ ts
    if abs(m[2, 2]) <= _EPS_DEN:
        raise DegeneracyError("correspondence maps a corner to infinity")
    return Homography(m)


@numba.njit(cache=True)
def _bilinear_kernel(img, sx, sy, fill, pad, out):
    h, w, c = img.shape
    tol = 1e-9
    for n in range(sx.shape[0]):
        x, y = sx[n], sy[n]
        if not (x >= -pad - tol and x <= w - 1 + pad + tol and y >= -pad - tol and y <= h - 1 + pad + tol):
            for ch in range(c):
                out[n, ch] = fill
            continue
        x = min(max(x, 0.0), w - 1.0)
        y = min(max(y, 0.0), h - 1.0)
        x0 = int(math.floor(x))
        y0 = int(math.floor(y))
        x1 = min(x0 + 1, w - 1)
        y1 = min(y0 + 1, h - 1)
        fx = x - x0
        fy = y - y0
        for ch in range(c):
            a = img[y0, x0, ch]
            b = img[y0, x1, ch]
            top = a + fx * (b - a)
            a = img[y1, x0, ch]
            b = img[y1, x1, ch]
            bot = a + fx * (b - a)
            out[n, ch] = top + fy * (bot - top)


def sample_bilinear(img: np.ndarray, sx, sy, fill: float, pad: float = 0.0) -> np.ndarray:
    """Bilinear lookup of ``img`` (h, w, c) at float coordinates.

    Points outside [-pad, w-1+pad] x [-pad, h-1+pad] (or non-finite) get
    ``fill``; points in the pad band take the nearest edge value.
    """
    img = np.ascontiguousarray(img, dtype=np.float64)
    sx = np.asarray(sx, dtype=np.float64)
    sy = np.asarray(sy, dtype=np.float64)
    shape = np.broadcast_shapes(sx.shape, sy.shape)
    fx = np.ascontiguousarray(np.broadcast_to(sx, shape)).ravel()
    fy = np.ascontiguousarray(np.broadcast_to(sy, shape)).ravel()
    out = np.empty((fx.size, img.shape[2]))
    _bilinear_kernel(img, fx, fy, float(fill), float(pad), out)
    return out.reshape(shape + (img.shape[2],))


def inverse_map(h: Homography, out_w: int, out_h: int):
    """Source coordinates of every destination pixel centre (NaN at the horizon)."""
    inv = h.inverse().matrix
    v, u = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    den = inv[2, 0] * u + inv[2, 1] * v + 1.0
    bad = np.abs(den) <= _EPS_DEN
    den = np.where(bad, 1.0, den)
    sx = (inv[0, 0] * u + inv[0, 1] * v + inv[0, 2]) / den
    sy = (inv[1, 0] * u + inv[1, 1] * v + inv[1, 2]) / den
    sx[bad] = np.nan
    return sx, sy


def warp_array(img: np.ndarray, h: Homography, out_w: int, out_h: int,
               fill: float = 1.0, pad: float = 0.0) -> np.ndarray:
    sx, sy = inverse_map(h, out_w, out_h)
    return sample_bilinear(img, sx, sy, fill, pad)


def warp_perspective(img: Raster, h: Homography, out_w: int, out_h: int) -> Raster:
    """Inverse-mapped bilinear warp; ``h`` maps source to destination and
    destination pixels whose preimage falls outside the source are white."""
    if out_w < 1 or out_h < 1:
        raise ParameterError("output size must be positive")
    out = warp_array(img.data, h, out_w, out_h, fill=1.0)
    return Raster(np.clip(out, 0.0, 1.0))


def mask_outline_points(mask: np.ndarray) -> np.ndarray:
    """Outer pixel corners of the leftmost and rightmost true pixel per row;
    their hull equals the hull of the full pixel area."""
    rows = np.nonzero(mask.any(axis=1))[0]
    if len(rows) == 0:
        raise DegeneracyError("empty mask")
    sub = mask[rows]
    left = np.argmax(sub, axis=1)
    right = mask.shape[1] - 1 - np.argmax(sub[:, ::-1], axis=1)
    r = rows.astype(np.float64)
    pts = np.concatenate([
        np.stack([left - 0.5, r - 0.5], 1), np.stack([left - 0.5, r + 0.5], 1),
        np.stack([right + 0.5, r - 0.5], 1), np.stack([right + 0.5, r + 0.5], 1),
    ])
    return pts


def destination_size(quad) -> tuple[int, int]:
    """(width, height) of the output rectangle: the longer of each pair of
    opposite quad edges, rounded."""
    q = np.asarray(quad, dtype=np.float64)
    top = np.linalg.norm(q[1] - q[0])
    bottom = np.linalg.norm(q[2] - q[3])
    left = np.linalg.norm(q[3] - q[0])
    right = np.linalg.norm(q[2] - q[1])
    return int(round(max(top, bottom))), int(round(max(left, right)))


def rectangle_quad(width: int, height: int) -> np.ndarray:
    """Pixel-boundary corners of a width x height image in Quad order."""
    return np.array([[-0.5, -0.5], [width - 0.5, -0.5],
                     [width - 0.5, height - 0.5], [-0.5, height - 0.5]])


def locate_paper(img: Raster, tiles: int = 8, clip_limit: float = 2.0) -> np.ndarray:
    """Quad of the ECG sheet: CLAHE on luma, background segmentation,
    hull of the sheet mask, largest-area quadrilateral."""
    enhanced = clahe(to_grayscale(img), tiles, tiles, clip_limit)
    mask = segment_background(enhanced)
    hull = convex_hull(mask_outline_points(mask))
    return simplify_to_quad(hull)


def rectify_quad(img: Raster, quad) -> Raster:
    w, h = destination_size(quad)
    if w < 1 or h < 1:
        raise DegeneracyError("degenerate paper quad")
    hom = solve_homography(quad, rectangle_quad(w, h))
    return warp_perspective(img, hom, w, h)


def rectify(img: Raster, tiles: int = 8, clip_limit: float = 2.0) -> Raster:
    """Crop and fronto-parallel warp of the photographed paper sheet.

    CLAHE only drives the boundary estimate; the warped pixels come from the
    input image so an already-rectified sheet passes through unchanged.
    """
    return rectify_quad(img, locate_paper(img, tiles, clip_limit))
