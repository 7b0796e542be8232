"""Rasters of cylinder covers, Euclidean distance fields, parallel sets and curvature estimators.

Pixel ``(i, j)`` of a mask has its centre at ``origin + ((j + 1/2) h, (i + 1/2) h)``;
row ``0`` is the bottom row.  Curvature estimators in the plane:

* ``c2`` is the occupied area, ``count * h**2``;
* ``c1`` is half the perimeter, estimated by the four-direction Cauchy-Crofton
  formula from boundary crossings along rows, columns and both diagonals;
* ``c0`` is the Euler characteristic ``V - E + F`` of the closed cell complex
  spanned by the occupied pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

# supersampling offsets in pixel units: the centre and the four points of a 2x2 pattern
_SAMPLES = ((0.0, 0.0), (-0.25, -0.25), (0.25, -0.25), (-0.25, 0.25), (0.25, 0.25))
# relative slack on the squared radius, so that exact lattice distances count as inside
THRESHOLD_RTOL = 1e-9


class RasterError(ValueError):
    pass


@dataclass(frozen=True)
class BinaryMask:
    bits: np.ndarray
    h: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.dtype != bool:
            raise RasterError("mask bits must be a 2-d boolean array")
        if not self.h > 0:
            raise RasterError("pixel size must be positive")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def area(self) -> float:
        return self.count * self.h**2

    def centres(self):
        """Coordinate vectors ``(x, y)`` of pixel centres along columns and rows."""
        x = self.origin[0] + (np.arange(self.width) + 0.5) * self.h
        y = self.origin[1] + (np.arange(self.height) + 0.5) * self.h
        return x, y

    def border_margin(self) -> int:
        """Pixels between the occupied bounding box and the nearest grid border (-1 if empty)."""
        rows = np.flatnonzero(self.bits.any(1))
        if len(rows) == 0:
            return -1
        cols = np.flatnonzero(self.bits.any(0))
        return int(min(rows[0], cols[0], self.height - 1 - rows[-1], self.width - 1 - cols[-1]))


@dataclass(frozen=True)
class DistanceField:
    """Distance from each pixel centre to the nearest occupied pixel centre.

    ``sq`` holds exact squared distances in pixel units; values beyond the
    cap given at construction are stored as ``cap + 1``.
    """

    sq: np.ndarray
    h: float
    origin: tuple[float, float]
    margin: float  # largest radius whose parallel set stays off the grid border
    cap: int

    @property
    def values(self) -> np.ndarray:
        """Distances in length units (``inf`` beyond the cap)."""
        d = np.sqrt(self.sq.astype(float)) * self.h
        d[self.sq > self.cap] = np.inf
        return d

    def as_mask(self, eps: float) -> BinaryMask:
        return parallel_set(self, eps)


@dataclass(frozen=True)
class CurvatureTriple:
    c0: float
    c1: float
    c2: float

    def __getitem__(self, k: int) -> float:
        return (self.c0, self.c1, self.c2)[k]


# -- grids and rasterization ------------------------------------------------------

@dataclass(frozen=True)
class Grid:
    h: float
    origin: tuple[float, float]
    shape: tuple[int, int]  # (rows, cols)

    @classmethod
    def covering(cls, lo, hi, h: float, pad: float) -> "Grid":
        """Grid of pixel size ``h`` covering the box ``[lo, hi]`` enlarged by ``pad`` on every side."""
        lo = np.asarray(lo, float) - pad
        hi = np.asarray(hi, float) + pad
        cols = int(math.ceil((hi[0] - lo[0]) / h))
        rows = int(math.ceil((hi[1] - lo[1]) / h))
        return cls(float(h), (float(lo[0]), float(lo[1])), (rows, cols))

    def empty(self) -> BinaryMask:
        return BinaryMask(np.zeros(self.shape, bool), self.h, self.origin)


@numba.njit(cache=True)
def _fill_convex(bits, normals, offsets, i0, i1, j0, j1, samples, tol):
    n_poly, n_edge = offsets.shape
    for p in range(n_poly):
        for i in range(i0[p], i1[p] + 1):
            for j in range(j0[p], j1[p] + 1):
                if bits[i, j]:
                    continue
                for s in range(samples.shape[0]):
                    x = j + 0.5 + samples[s, 0]
                    y = i + 0.5 + samples[s, 1]
                    inside = True
                    for e in range(n_edge):
                        if normals[p, e, 0] * x + normals[p, e, 1] * y - offsets[p, e] > tol:
                            inside = False
                            break
                    if inside:
                        bits[i, j] = True
                        break


def rasterize_polygons(polys: np.ndarray, grid: Grid) -> BinaryMask:
    """Mark pixels whose centre, or one of four 2x2 subsample points, lies in a closed convex polygon.

    ``polys`` has shape ``(n, m, 2)``.  Polygons smaller than a pixel still mark
    the pixel holding their vertex centroid, so no cell of a cover is lost.
    """
    bits = np.zeros(grid.shape, bool)
    polys = np.asarray(polys, float)
    if len(polys) == 0:
        return BinaryMask(bits, grid.h, grid.origin)
    h = grid.h
    ox, oy = grid.origin
    rows, cols = grid.shape
    # pixel-unit coordinates relative to the grid origin
    P = np.empty_like(polys)
    P[..., 0] = (polys[..., 0] - ox) / h
    P[..., 1] = (polys[..., 1] - oy) / h
    signed = 0.5 * (P[:, :, 0] * np.roll(P[:, :, 1], -1, 1) - np.roll(P[:, :, 0], -1, 1) * P[:, :, 1]).sum(1)
    P = np.where((signed < 0)[:, None, None], P[:, ::-1], P)
    edges = np.roll(P, -1, axis=1) - P
    normals = np.stack([edges[..., 1], -edges[..., 0]], axis=-1)
    lengths = np.linalg.norm(normals, axis=-1, keepdims=True)
    normals = normals / np.where(lengths > 0, lengths, 1.0)
    offsets = (normals * P).sum(-1)
    tol = 1e-9
    j0 = np.clip(np.floor(P[..., 0].min(1) - 0.25).astype(np.int64), 0, cols - 1)
    j1 = np.clip(np.floor(P[..., 0].max(1) + 0.25).astype(np.int64), 0, cols - 1)
    i0 = np.clip(np.floor(P[..., 1].min(1) - 0.25).astype(np.int64), 0, rows - 1)
    i1 = np.clip(np.floor(P[..., 1].max(1) + 0.25).astype(np.int64), 0, rows - 1)
    # centroid pixels guarantee that tiny cells are represented
    cen = P.mean(1)
    ci = np.clip(np.floor(cen[:, 1]).astype(np.int64), 0, rows - 1)
    cj = np.clip(np.floor(cen[:, 0]).astype(np.int64), 0, cols - 1)
    bits[ci, cj] = True
    _fill_convex(bits, normals, offsets, i0, i1, j0, j1, np.array(_SAMPLES), tol)
    return BinaryMask(bits, grid.h, grid.origin)


def polygons_bbox(polys: np.ndarray):
    polys = np.asarray(polys, float)
    return polys.reshape(-1, 2).min(0), polys.reshape(-1, 2).max(0)


def rasterize_cover(stop, O, h: float, pad: float = 0.0) -> BinaryMask:
    """Raster of the union of closed cells ``f_sigma(O)`` over a Markov stop.

    The stop scale ``delta = stop.r`` must satisfy ``h <= delta / 4``; the grid
    covers the cells plus ``pad`` and two guard pixels on every side.
    """
    from .codetree.stops import stop_polygons

    if h > stop.r / 4:
        raise RasterError(f"grid too coarse: pixel size must be at most {stop.r / 4!r} for stop scale {stop.r!r}")
    polys = stop_polygons(stop, O)
    lo, hi = polygons_bbox(polys)
    return rasterize_polygons(polys, Grid.covering(lo, hi, h, pad + 2 * h))


# -- distance fields and parallel sets ----------------------------------------------

@numba.njit(cache=True)
def _column_pass(bits, cap):
    # per column: distance in rows to the nearest occupied pixel, saturating at cap
    rows, cols = bits.shape
    g = np.empty((rows, cols), np.int32)
    d = np.full(cols, cap, np.int32)
    for i in range(rows):
        for j in range(cols):
            if bits[i, j]:
                d[j] = 0
            elif d[j] < cap:
                d[j] += 1
            g[i, j] = d[j]
    d[:] = cap
    for i in range(rows - 1, -1, -1):
        for j in range(cols):
            if bits[i, j]:
                d[j] = 0
            elif d[j] < cap:
                d[j] += 1
            if d[j] < g[i, j]:
                g[i, j] = d[j]
    return g


@numba.njit(cache=True)
def _row_pass(g, col_cap, sq_cap):
    # per row: lower envelope of the parabolas (j - q)**2 + g[q]**2
    rows, cols = g.shape
    out = np.empty((rows, cols), np.int32)
    v = np.empty(cols, np.int64)
    z = np.empty(cols + 1, np.float64)
    f = np.empty(cols, np.int64)
    for i in range(rows):
        k = -1
        for q in range(cols):
            gq = g[i, q]
            if gq >= col_cap:
                continue
            fq = np.int64(gq) * gq
            f[q] = fq
            while k >= 0:
                p = v[k]
                s = ((fq + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            if k == 0:
                z[k] = -1e300
            else:
                p = v[k - 1]
                z[k] = ((fq + q * q) - (f[p] + p * p)) / (2.0 * (q - p))
            z[k + 1] = 1e300
        if k < 0:
            for q in range(cols):
                out[i, q] = sq_cap + 1
            continue
        kk = 0
        for q in range(cols):
            while z[kk + 1] < q:
                kk += 1
            p = v[kk]
            val = (q - p) * (q - p) + f[p]
            out[i, q] = val if val <= sq_cap else sq_cap + 1
    return out


def squared_distance_pixels(bits: np.ndarray, max_distance: float | None = None) -> tuple[np.ndarray, int]:
    """Exact squared Euclidean distances (pixel units) by the two-pass separable algorithm.

    Distances above ``max_distance`` pixels are reported as ``cap + 1`` where
    ``cap = floor(max_distance**2)``; parabolas that cannot reach below the cap
    are skipped.
    """
    rows, cols = bits.shape
    full = rows * rows + cols * cols
    if max_distance is None or max_distance**2 >= full:
        sq_cap = full
    else:
        sq_cap = int(math.floor(max_distance**2))
    col_cap = min(int(math.isqrt(sq_cap)) + 1, rows + 1)
    g = _column_pass(np.ascontiguousarray(bits), np.int32(col_cap))
    return _row_pass(g, col_cap, sq_cap), sq_cap


def distance_transform(mask: BinaryMask, max_distance: float | None = None) -> DistanceField:
    """Exact Euclidean distance from every pixel centre to the nearest occupied pixel centre.

    ``max_distance`` (length units) bounds the distances that must be exact;
    larger ones are only known to exceed it.
    """
    if not mask.bits.any():
        raise RasterError("distance transform of an empty mask")
    limit = None if max_distance is None else max_distance / mask.h + 2.0
    sq, cap = squared_distance_pixels(mask.bits, limit)
    margin = mask.border_margin() * mask.h
    if max_distance is not None:
        margin = min(margin, max_distance + 2 * mask.h)
    return DistanceField(sq, mask.h, mask.origin, margin, cap)


def _sq_threshold(eps: float, h: float) -> int:
    """Largest squared pixel distance inside the parallel set of radius ``eps``."""
    return int(math.floor((eps / h) ** 2 * (1 + THRESHOLD_RTOL)))


def parallel_set(field: DistanceField, eps: float) -> BinaryMask:
    """Pixels within distance ``eps`` of the occupied set."""
    if eps < 0:
        raise RasterError("parallel-set radius must be non-negative")
    if eps >= field.margin:
        raise RasterError(
            f"parallel set at radius {eps!r} would reach the grid border (margin {field.margin!r})"
        )
    return BinaryMask(field.sq <= _sq_threshold(eps, field.h), field.h, field.origin)


# -- curvature estimators -------------------------------------------------------------

CROFTON_AXIS = math.pi / 8
CROFTON_DIAGONAL = math.pi / (8 * math.sqrt(2))


def crossing_counts(bits: np.ndarray) -> tuple[int, int, int, int]:
    """Boundary crossings along rows, columns and the two diagonals (grid padded with background)."""
    p = np.pad(bits, 1)
    horiz = np.count_nonzero(p[:, 1:] != p[:, :-1])
    vert = np.count_nonzero(p[1:, :] != p[:-1, :])
    diag = np.count_nonzero(p[1:, 1:] != p[:-1, :-1])
    anti = np.count_nonzero(p[1:, :-1] != p[:-1, 1:])
    return horiz, vert, diag, anti


def euler_characteristic(bits: np.ndarray) -> int:
    """``V - E + F`` of the closed complex of occupied pixels (diagonal neighbours touch)."""
    p = np.pad(bits, 1)
    V = np.count_nonzero(p[:-1, :-1] | p[1:, :-1] | p[:-1, 1:] | p[1:, 1:])
    E = np.count_nonzero(p[:-1, :] | p[1:, :]) + np.count_nonzero(p[:, :-1] | p[:, 1:])
    F = np.count_nonzero(p)
    return int(V - E + F)


def curvature_triple(mask: BinaryMask) -> CurvatureTriple:
    if not mask.bits.any():
        raise RasterError("curvature of an empty mask")
    if mask.border_margin() < 1:
        raise RasterError("occupied set touches the grid border: enlarge grid margin")
    nh, nv, nd, na = crossing_counts(mask.bits)
    perimeter = mask.h * (CROFTON_AXIS * (nh + nv) + CROFTON_DIAGONAL * (nd + na))
    return CurvatureTriple(float(euler_characteristic(mask.bits)), 0.5 * perimeter, mask.area)


@numba.njit(cache=True)
def _bin(d, thresholds):
    # number of thresholds strictly below d: the pixel is inside for all later ones
    lo, hi = 0, thresholds.shape[0]
    if d > thresholds[hi - 1]:
        return hi
    if d <= thresholds[0]:
        return 0
    while lo < hi:
        mid = (lo + hi) // 2
        if thresholds[mid] < d:
            lo = mid + 1
        else:
            hi = mid
    return lo


@numba.njit(cache=True)
def _curve_histograms(values, thresholds):
    n = thresholds.shape[0]
    rows, cols = values.shape
    # histograms over bin indices 0..n (n = never inside)
    hf = np.zeros(n + 1, np.int64)
    hv = np.zeros(n + 1, np.int64)
    he = np.zeros(n + 1, np.int64)
    hx_lo = np.zeros(n + 1, np.int64)  # crossing pairs: min index (axis directions)
    hx_hi = np.zeros(n + 1, np.int64)
    hd_lo = np.zeros(n + 1, np.int64)  # crossing pairs: diagonal directions
    hd_hi = np.zeros(n + 1, np.int64)
    prev = np.full(cols + 2, n, np.int64)
    cur = np.full(cols + 2, n, np.int64)
    for i in range(rows + 1):
        if i < rows:
            for j in range(cols):
                cur[j + 1] = _bin(values[i, j], thresholds)
        else:
            for j in range(cols + 2):
                cur[j] = n
        cur[0] = n
        cur[cols + 1] = n
        for j in range(cols + 2):
            c = cur[j]
            hf[c] += 1
            # vertical pair (prev row, this row) in column j
            p = prev[j]
            lo = min(p, c)
            hi = max(p, c)
            he[lo] += 1
            hx_lo[lo] += 1
            hx_hi[hi] += 1
            if j + 1 < cols + 2:
                c2 = cur[j + 1]
                # horizontal pair in this row
                lo = min(c, c2)
                hi = max(c, c2)
                he[lo] += 1
                hx_lo[lo] += 1
                hx_hi[hi] += 1
                p2 = prev[j + 1]
                # diagonal pairs of the 2x2 window
                lo = min(p, c2)
                hi = max(p, c2)
                hd_lo[lo] += 1
                hd_hi[hi] += 1
                lo = min(p2, c)
                hi = max(p2, c)
                hd_lo[lo] += 1
                hd_hi[hi] += 1
                hv[min(min(p, p2), min(c, c2))] += 1
        for j in range(cols + 2):
            prev[j] = cur[j]
    return hf, hv, he, hx_lo, hx_hi, hd_lo, hd_hi


def curvature_curve(field: DistanceField, eps) -> dict[str, np.ndarray]:
    """Curvature triples of the parallel sets at every radius in ``eps``, from one pass over the field.

    Equivalent to thresholding the field at each radius and calling
    :func:`curvature_triple`; returns arrays ``c0, c1, c2`` aligned with ``eps``.
    """
    eps = np.asarray(eps, float)
    if eps.size == 0:
        return {"c0": np.zeros(0), "c1": np.zeros(0), "c2": np.zeros(0)}
    if eps.min() < 0:
        raise RasterError("parallel-set radius must be non-negative")
    if eps.max() >= field.margin - field.h:
        raise RasterError(
            f"parallel set at radius {eps.max()!r} would reach the grid border (margin {field.margin!r})"
        )
    order = np.argsort(eps)
    thr = np.array([_sq_threshold(e, field.h) for e in eps[order]], np.int64)
    hf, hv, he, hxl, hxh, hdl, hdh = _curve_histograms(field.sq, thr)
    n = len(thr)
    F = np.cumsum(hf)[:n]
    V = np.cumsum(hv)[:n]
    E = np.cumsum(he)[:n]
    X = np.cumsum(hxl)[:n] - np.cumsum(hxh)[:n]
    Xd = np.cumsum(hdl)[:n] - np.cumsum(hdh)[:n]
    h = field.h
    c0 = (V - E + F).astype(float)
    c1 = 0.5 * h * (CROFTON_AXIS * X + CROFTON_DIAGONAL * Xd)
    c2 = F * h * h
    out = {}
    for name, arr in (("c0", c0), ("c1", c1), ("c2", c2)):
        res = np.empty(n)
        res[order] = arr
        out[name] = res
    return out


# -- output ---------------------------------------------------------------------------

def mask_rectangles(mask: BinaryMask) -> list[tuple[int, int, int, int]]:
    """Cover the occupied pixels by rectangles ``(col, row, width, height)``.

    Runs of each row are merged with identical runs of the following rows.
    """
    open_rects: dict[tuple[int, int], list[int]] = {}
    done: list[tuple[int, int, int, int]] = []
    for i in range(mask.height):
        row = np.concatenate([[False], mask.bits[i], [False]])
        diff = np.flatnonzero(row[1:] != row[:-1])
        runs = set(zip(diff[::2].tolist(), diff[1::2].tolist()))
        for key in list(open_rects):
            if key not in runs:
                r0, nrows = open_rects.pop(key)
                done.append((key[0], r0, key[1] - key[0], nrows))
        for key in runs:
            if key in open_rects:
                open_rects[key][1] += 1
            else:
                open_rects[key] = [i, 1]
    for key, (r0, nrows) in open_rects.items():
        done.append((key[0], r0, key[1] - key[0], nrows))
    return sorted(done, key=lambda r: (r[1], r[0]))


def render_svg(mask: BinaryMask, path: str, fill: str = "#1f3b73") -> None:
    """Write the occupied region as an SVG of merged pixel rectangles (y axis pointing up)."""
    rects = mask_rectangles(mask)
    W, H = mask.width, mask.height
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" width="{W}" height="{H}">',
        f'<g fill="{fill}" shape-rendering="crispEdges">',
    ]
    for c, r, w, hgt in rects:
        lines.append(f'<rect x="{c}" y="{H - r - hgt}" width="{w}" height="{hgt}"/>')
    lines += ["</g>", "</svg>", ""]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))


def write_pgm(mask: BinaryMask, path: str) -> None:
    """Binary PGM dump (occupied = 255), top row first."""
    data = np.where(mask.bits[::-1], 255, 0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise RasterError("not a binary PGM file")
    w, h = int(parts[1]), int(parts[2])
    data = np.frombuffer(parts[4][: w * h], np.uint8).reshape(h, w)
    return data[::-1] > 0
