"""Monte-Carlo mean curvature curves and the limit functionals built from them.

Every replicate is one random tree with seed ``replicate_seed(seed, j)``.  The
fractal is replaced by the union of closed cells ``f_sigma(O)`` over a Markov
stop at a scale ``delta`` well below the radii of interest; radii are handled
in bands (a factor ``band_factor`` apart) that share one raster and one
distance field.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .codetree.models import TreeModel
from .codetree.stops import markov_stop, stop_polygons
from .codetree.tree import Forest
from .rasterlab import Grid, RasterError, curvature_curve, distance_transform, rasterize_polygons
from .rng import replicate_seed
from .simgeom import OpenSetSpec

MAX_SIDE = 8192
MIN_EPS_OVER_H = 8.0
GUARD_PIXELS = 3


@dataclass(frozen=True)
class RasterSettings:
    """Resolution controls: stop scale ``delta = q * eps_lo`` and pixel ``h = h_ratio * eps_lo`` per band.

    The stop scale is raised to ``4 h`` when needed so that every cell spans
    at least four pixels.
    """

    q: float = 0.05
    h_ratio: float = 1.0 / 32
    max_side: int = MAX_SIDE
    band_factor: float = 10.0


def geometric_grid(hi: float, lo: float, per_octave: int = 8) -> np.ndarray:
    """Descending radii ``hi * 2**(-j / per_octave)`` down to ``lo`` (inclusive up to rounding)."""
    if not 0 < lo <= hi:
        raise ValueError("grid needs 0 < lo <= hi")
    n = int(math.floor(per_octave * math.log2(hi / lo) + 1e-9))
    return hi * 2.0 ** (-np.arange(n + 1) / per_octave)


def radius_bands(radii: np.ndarray, factor: float) -> list[np.ndarray]:
    """Index groups of descending radii whose spread stays within ``factor``."""
    order = np.argsort(-radii)
    bands, cur = [], [order[0]]
    for j in order[1:]:
        if radii[cur[0]] / radii[j] > factor * (1 + 1e-12):
            bands.append(np.array(cur))
            cur = [j]
        else:
            cur.append(j)
    bands.append(np.array(cur))
    return bands


def plan_band(eps_hi: float, eps_lo: float, span: float, s: RasterSettings) -> tuple[float, float]:
    """Pixel size and stop scale for one band; raises if the grid cap forbids ``eps_lo``."""
    h = s.h_ratio * eps_lo
    total = span + 2 * eps_hi
    if total / h + 2 * GUARD_PIXELS > s.max_side:
        h = total / (s.max_side - 2 * GUARD_PIXELS)
    if eps_lo / h < MIN_EPS_OVER_H * (1 - 1e-12):
        smallest = MIN_EPS_OVER_H * h
        raise RasterError(
            f"grid cap of {s.max_side} pixels per side cannot resolve radius {eps_lo!r}; "
            f"smallest feasible radius in this band is {smallest!r}"
        )
    delta = max(s.q * eps_lo, 4 * h)
    return h, delta


def _cover_curves(polys: np.ndarray, radii: np.ndarray, h: float) -> np.ndarray:
    """Curvature triples (3, n) of the parallel sets of a polygon union at ``radii``."""
    lo = polys.reshape(-1, 2).min(0)
    hi = polys.reshape(-1, 2).max(0)
    grid = Grid.covering(lo, hi, h, radii.max() + GUARD_PIXELS * h)
    mask = rasterize_polygons(polys, grid)
    fld = distance_transform(mask, float(radii.max()))
    c = curvature_curve(fld, radii)
    return np.stack([c["c0"], c["c1"], c["c2"]])


def _open_set_span(O: OpenSetSpec) -> float:
    v = O.vertices
    return float(max(np.ptp(v[:, 0]), np.ptp(v[:, 1])))


def replicate_curve(model: TreeModel, O: OpenSetSpec, R: float, eps: np.ndarray, settings: RasterSettings,
                    tree_seed: int) -> np.ndarray:
    """Curvature triples ``(3, len(eps))`` of one random tree's parallel sets."""
    eps = np.asarray(eps, float)
    out = np.empty((3, len(eps)))
    forest = Forest(model, 1, tree_seed)
    span = _open_set_span(O)
    for band in radius_bands(eps, settings.band_factor):
        e = eps[band]
        h, delta = plan_band(e.max(), e.min(), span, settings)
        stop = markov_stop(forest, delta, R)
        out[:, band] = _cover_curves(stop_polygons(stop, O), e, h)
    return out


def replicate_rk(model: TreeModel, O: OpenSetSpec, R: float, r_grid: np.ndarray, settings: RasterSettings,
                 tree_seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Paired ``X(r) = C_k(F(r))`` and ``Y(r) = sum_i 1{r <= R r_i} C_k(F_i(r))`` for one tree, each ``(3, n)``.

    ``F_i`` is the part of the cover below the first-level child ``i``, which is
    ``f_i`` applied to the cover of the shifted tree at the rescaled stop.
    The third array holds the jump of ``X - Y`` just above each grid radius:
    at ``r = R r_i`` it is the contribution of the children with that ratio.
    """
    r_grid = np.asarray(r_grid, float)
    X = np.empty((3, len(r_grid)))
    Y = np.zeros((3, len(r_grid)))
    J = np.zeros((3, len(r_grid)))
    forest = Forest(model, 1, tree_seed, depth=1)
    span = _open_set_span(O)
    root = forest.levels[0]
    n_children = int(forest.table.n_maps[root.label[0]])
    first_ratios = forest.levels[1].ratio[:n_children]
    for band in radius_bands(r_grid, settings.band_factor):
        r = r_grid[band]
        h, delta = plan_band(r.max(), r.min(), span, settings)
        stop = markov_stop(forest, delta, R)
        polys = stop_polygons(stop, O)
        X[:, band] = _cover_curves(polys, r, h)
        first = stop.first_letters()
        for i in range(1, n_children + 1):
            active = r <= R * first_ratios[i - 1] * (1 + 1e-12)
            if not active.any():
                continue
            sel = first == i
            if not sel.any():
                # the stop is the root itself: the child cover is f_i(O)
                raise RasterError("stop scale too coarse to separate first-level subtrees")
            part = _cover_curves(polys[sel], r[active], h)
            Y[:, band[active]] += part
            at_cut = np.isclose(r[active], R * first_ratios[i - 1], rtol=1e-9, atol=0.0)
            J[:, band[active][at_cut]] += part[:, at_cut]
    return X, Y, J


# -- replicate execution ------------------------------------------------------------------

def run_replicates(fn: Callable[[int], object], n: int, seed: int, jobs: int = 1, stream: int = 0) -> list:
    """``fn(tree_seed)`` for replicates ``0..n-1``; results are returned in replicate order."""
    seeds = [replicate_seed(seed, j, stream) for j in range(n)]
    if jobs <= 1 or n <= 1:
        return [fn(s) for s in seeds]
    import multiprocessing as mp

    ctx = mp.get_context("fork")
    with ctx.Pool(min(jobs, n)) as pool:
        return pool.map(fn, seeds, chunksize=1)


class _CurveTask:
    def __init__(self, *args):
        self.args = args

    def __call__(self, tree_seed):
        return replicate_curve(*self.args, tree_seed=tree_seed)


class _RkTask:
    def __init__(self, *args):
        self.args = args

    def __call__(self, tree_seed):
        return replicate_rk(*self.args, tree_seed=tree_seed)


# -- curves ---------------------------------------------------------------------------------

def _stderr(samples: np.ndarray) -> np.ndarray:
    n = samples.shape[0]
    if n < 2:
        return np.zeros(samples.shape[1:])
    return samples.std(axis=0, ddof=1) / math.sqrt(n)


@dataclass
class MeanCurve:
    """Per-radius Monte-Carlo means of ``C_k(F(eps))`` for ``k = 0, 1, 2`` (radii descending)."""

    eps: np.ndarray
    samples: np.ndarray  # (n_mc, 3, n_eps)

    @property
    def n_mc(self) -> int:
        return self.samples.shape[0]

    @property
    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    @property
    def stderr(self) -> np.ndarray:
        return _stderr(self.samples)

    def rescaled(self, k: int, D: float) -> tuple[np.ndarray, np.ndarray]:
        """``eps**(D - k) * mean_k`` and its standard error."""
        w = self.eps ** (D - k)
        return w * self.mean[k], w * self.stderr[k]

    def restrict(self, lo: float, hi: float) -> "MeanCurve":
        """The part of the curve with ``lo <= eps <= hi``."""
        sel = (self.eps >= lo * (1 - 1e-12)) & (self.eps <= hi * (1 + 1e-12))
        if not sel.any():
            raise ValueError("no radius of the curve lies in the requested range")
        return MeanCurve(self.eps[sel], self.samples[:, :, sel])

    def rows(self, k_set=(0, 1, 2)):
        m, s = self.mean, self.stderr
        for j, e in enumerate(self.eps):
            for k in k_set:
                yield (float(e), k, float(m[k, j]), float(s[k, j]), self.n_mc)


def mean_curvature_curve(model: TreeModel, O: OpenSetSpec, R: float, eps_grid, n_mc: int,
                         settings: RasterSettings = RasterSettings(), seed: int = 0,
                         jobs: int = 1, min_replicates: int = 30) -> MeanCurve:
    """Monte-Carlo mean curvature curve over ``n_mc`` independent trees."""
    eps = np.sort(np.asarray(eps_grid, float))[::-1]
    if eps.min() <= 0 or eps.max() > R:
        raise ValueError("radii must lie in (0, R]")
    if n_mc < min_replicates:
        raise ValueError(f"n_mc must be at least {min_replicates}")
    res = run_replicates(_CurveTask(model, O, R, eps, settings), n_mc, seed, jobs, stream=0xC0)
    return MeanCurve(eps, np.stack(res))


@dataclass
class RkCurve:
    """Paired estimates of ``R_k(r)`` on a descending grid, for ``k = 0, 1, 2``."""

    r: np.ndarray
    x: np.ndarray  # (n_mc, 3, n_r): C_k(F(r))
    y: np.ndarray  # (n_mc, 3, n_r): sum over children
    jump: np.ndarray | None = None  # (n_mc, 3, n_r): right limit minus value, nonzero at r = R r_i

    def __post_init__(self):
        if self.jump is None:
            self.jump = np.zeros_like(self.x)

    @property
    def n_mc(self) -> int:
        return self.x.shape[0]

    @property
    def diff(self) -> np.ndarray:
        return self.x - self.y

    def rk(self, k: int) -> np.ndarray:
        return self.diff[:, k].mean(0)

    def stderr(self, k: int) -> np.ndarray:
        return _stderr(self.diff[:, k])

    def unpaired_stderr(self, k: int) -> np.ndarray:
        """Standard error if ``X`` and ``Y`` came from independent trees."""
        return np.sqrt(_stderr(self.x[:, k]) ** 2 + _stderr(self.y[:, k]) ** 2)

    def rows(self, k_set=(0, 1, 2)):
        for k in k_set:
            rk, se = self.rk(k), self.stderr(k)
            for j, r in enumerate(self.r):
                yield (float(r), k, float(rk[j]), float(se[j]))


def estimate_rk(model: TreeModel, O: OpenSetSpec, R: float, r_grid, n_mc: int,
                settings: RasterSettings = RasterSettings(), seed: int = 0, jobs: int = 1) -> RkCurve:
    """Paired Monte-Carlo estimate of ``R_k`` on ``r_grid``.

    ``R_k`` jumps at the radii ``R r_i`` where a first-level child drops out of
    the sum; those radii are added to the grid so that integrals can be split
    there.
    """
    r = np.asarray(r_grid, float)
    if r.min() <= 0 or r.max() > R * (1 + 1e-12):
        raise ValueError("r grid must lie in (0, R]")
    r = with_cutoffs(r, cutoff_radii(model, R))
    res = run_replicates(_RkTask(model, O, R, r, settings), n_mc, seed, jobs, stream=0xD1)
    return RkCurve(r, *(np.stack([item[j] for item in res]) for j in range(3)))


def cutoff_radii(model: TreeModel, R: float) -> np.ndarray:
    """The radii ``R r`` for every contraction ratio ``r`` a first-level child can have."""
    ratios = {float(x) for vec, _ in model.ratio_atoms() for x in vec}
    return np.array(sorted(R * x for x in ratios))


def with_cutoffs(r: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    """Descending union of a grid and the cutoffs inside its range (near-duplicates merged)."""
    inside = cuts[(cuts >= r.min()) & (cuts <= r.max())]
    extra = [c for c in inside if not np.any(np.isclose(r, c, rtol=1e-9, atol=0.0))]
    out = np.sort(np.concatenate([r, extra]))[::-1]
    for c in inside:
        out[np.isclose(out, c, rtol=1e-9, atol=0.0)] = c
    return out


def _trapezoid_with_jumps(t: np.ndarray, g: np.ndarray, gj: np.ndarray) -> np.ndarray:
    """Trapezoid rule over ascending ``t`` for a piecewise-smooth ``g`` whose right limits are ``g + gj``."""
    return (0.5 * (g[..., :-1] + gj[..., :-1] + g[..., 1:]) * np.diff(t)).sum(axis=-1)


def _interp_with_jumps(x: np.ndarray, t: np.ndarray, g: np.ndarray, gj: np.ndarray) -> np.ndarray:
    """Linear interpolation in ``t`` (ascending) using right limits at the lower end of each interval."""
    j = np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(t) - 2)
    w = (x - t[j]) / (t[j + 1] - t[j])
    out = (1 - w) * (g[j] + gj[j]) + w * g[j + 1]
    exact = np.isclose(x, t[j], rtol=0.0, atol=1e-12)
    return np.where(exact, g[j], out)


# -- limit functionals ------------------------------------------------------------------------

def _log_average(eps_desc: np.ndarray, g: np.ndarray, delta: float) -> np.ndarray:
    """``(1/|ln delta|) * integral_delta^1 g(eps) deps/eps``; ``g`` may carry leading sample axes."""
    t = np.log(eps_desc[::-1])
    g = g[..., ::-1]
    lo = math.log(delta)
    if lo >= 0:
        return np.zeros(g.shape[:-1])
    top = min(t[-1], 0.0)
    tt = np.concatenate([[lo], t[(t > lo) & (t < top)], [top]])
    gg = np.stack([np.interp(tt, t, row) for row in g.reshape(-1, g.shape[-1])])
    total = np.trapezoid(gg, tt, axis=-1) + gg[:, -1] * (0.0 - top)  # plateau above the grid
    return (total / abs(lo)).reshape(g.shape[:-1])


def check_density(eps: np.ndarray, lo: float, hi: float, per_decade: int = 8):
    t = np.log10(np.sort(eps[(eps >= lo * (1 - 1e-12)) & (eps <= hi * (1 + 1e-12))]))
    if len(t) < 2 or np.max(np.diff(t)) > 1.0 / per_decade + 1e-9:
        raise ValueError(f"radius grid too sparse: need at least {per_decade} points per decade")


@dataclass
class Estimate:
    value: float
    stderr: float
    diagnostics: dict = field(default_factory=dict)


def average_limit(curve: MeanCurve, k: int, D: float, delta: float) -> Estimate:
    """Logarithmic average of ``eps**(D-k) * mean_k(eps)`` over ``[delta, 1]``.

    Trapezoid rule in ``ln eps`` with linear interpolation; above the largest
    radius of the grid the rescaled value is held constant.
    """
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    if delta >= 1:
        return Estimate(0.0, 0.0, {"delta": delta})
    if delta < curve.eps.min() * (1 - 1e-12):
        raise ValueError("delta must not be below the smallest radius of the curve")
    check_density(curve.eps, delta, curve.eps.max())
    g = curve.eps ** (D - k) * curve.samples[:, k, :]
    per = _log_average(curve.eps, g, delta)
    return Estimate(float(per.mean()), float(_stderr(per[:, None])[0]),
                    {"delta": delta, "plateau_from": float(curve.eps.max())})


@dataclass
class RenewalResult:
    value: float
    stderr: float
    tail: float
    tail_fraction: float
    decay_exponent: float
    warning: str = ""

    def diagnostics(self) -> dict:
        return {"tail": self.tail, "tail_fraction": self.tail_fraction,
                "decay_exponent": self.decay_exponent, "warning": self.warning}


def fit_power_tail(r: np.ndarray, g: np.ndarray) -> tuple[float, float]:
    """Fit ``|g| = A r**delta`` on the small-r half of the grid; returns ``(A, delta)`` with ``A`` signed."""
    order = np.argsort(r)
    half = order[: max(3, len(r) // 2)]
    rr, gg = r[half], g[half]
    ok = gg != 0
    if ok.sum() < 2:
        return 0.0, float("inf")
    sign = np.sign(gg[ok].sum())
    slope, icpt = np.polyfit(np.log(rr[ok]), np.log(np.abs(gg[ok])), 1)
    return float(sign * math.exp(icpt)), float(slope)


def renewal_integral(rk: RkCurve, D: float, k: int, eta: float, R: float) -> RenewalResult:
    """``(1/eta) * integral_0^R r**(D-k-1) R_k(r) dr`` with a fitted power-law tail below the grid."""
    r = rk.r
    if r.max() < R * (1 - 1e-9):
        raise ValueError("r grid must reach R")
    if r.min() > R / 256 * (1 + 1e-9):
        raise ValueError("r grid must reach down to R/256")
    g_samples = r ** (D - k) * rk.diff[:, k, :]
    t = np.log(r[::-1])
    per = _trapezoid_with_jumps(t, g_samples[:, ::-1], (r ** (D - k) * rk.jump[:, k, :])[:, ::-1]) / eta
    body = float(per.mean())
    g = g_samples.mean(0)
    A, dhat = fit_power_tail(r, g)
    r_lo = float(r.min())
    warning = ""
    if not np.isfinite(dhat) or dhat <= 0:
        tail = 0.0
        if np.isfinite(dhat):
            warning = f"fitted tail exponent {dhat:.3g} is not positive; tail excluded"
    else:
        tail = A * r_lo**dhat / dhat / eta
    value = body + tail
    frac = abs(tail) / (abs(body) + abs(tail)) if (body or tail) else 0.0
    if frac > 0.2:
        warning = (warning + "; " if warning else "") + f"tail fraction {frac:.3f} exceeds 0.2"
    return RenewalResult(value, float(_stderr(per[:, None])[0]), tail, frac, dhat, warning)


@dataclass
class LatticeSums:
    s: float
    n: np.ndarray
    partial: np.ndarray  # partial sums of the lattice series, one per m_max in n
    partial_stderr: np.ndarray
    n_values: np.ndarray
    direct: np.ndarray  # e^{(k-D)(s+nc)} mean_k(e^{-(s+nc)})
    direct_stderr: np.ndarray


def lattice_sums(rk: RkCurve, D: float, k: int, eta: float, c: float, s_grid: Sequence[float],
                 m_max: int, curve: MeanCurve | None = None, n_values: Sequence[int] = ()) -> list[LatticeSums]:
    """Partial sums ``(1/eta) sum_{m<=M} e^{(k-D)(s+mc)} R_k(e^{-(s+mc)})`` and the matching direct sequence.

    ``R_k`` is interpolated linearly in ``ln r`` between its one-sided limits;
    every lattice point must lie on the grid.
    """
    t = np.log(rk.r[::-1])
    per = rk.diff[:, k, ::-1]
    per_jump = rk.jump[:, k, ::-1]
    out = []
    for s in s_grid:
        if not 0 <= s < c:
            raise ValueError("s must lie in [0, c)")
        pts = -(s + c * np.arange(m_max + 1))
        if pts.min() < t[0] - 1e-9 or pts.max() > t[-1] + 1e-9:
            raise ValueError("r grid does not cover the lattice points")
        weights = np.exp(-(k - D) * pts) / eta
        values = np.stack([_interp_with_jumps(pts, t, row, jrow) for row, jrow in zip(per, per_jump)])
        partial_per = np.cumsum(weights * values, axis=1)
        partial = partial_per.mean(0)
        n = np.asarray(list(n_values), int)
        if curve is not None and len(n):
            ct = np.log(curve.eps[::-1])
            m = curve.mean[k][::-1]
            se = curve.stderr[k][::-1]
            q = -(s + c * n)
            if q.min() < ct[0] - 1e-9 or q.max() > ct[-1] + 1e-9:
                raise ValueError("radius grid does not cover the direct-sequence radii")
            direct = np.exp((k - D) * (s + c * n)) * np.interp(q, ct, m)
            dse = np.exp((k - D) * (s + c * n)) * np.interp(q, ct, se)
        else:
            direct = dse = np.zeros(len(n))
        out.append(LatticeSums(float(s), np.arange(m_max + 1), partial, _stderr(partial_per), n, direct, dse))
    return out


@dataclass
class LimitReport:
    k: int
    value_renewal: float | None
    value_average: float | None
    stderr_renewal: float = 0.0
    stderr_average: float = 0.0
    value_lattice: list | None = None
    diagnostics: dict = field(default_factory=dict)

    def rows(self):
        if self.value_renewal is not None:
            yield (self.k, "renewal", self.value_renewal, self.stderr_renewal,
                   json.dumps(self.diagnostics.get("renewal", {}), sort_keys=True))
        if self.value_average is not None:
            yield (self.k, "average", self.value_average, self.stderr_average,
                   json.dumps(self.diagnostics.get("average", {}), sort_keys=True))
        for item in self.value_lattice or []:
            yield (self.k, "lattice", item["value"], item["stderr"], json.dumps(item["diagnostics"], sort_keys=True))


@dataclass
class Verdict:
    positivity_min: float
    positivity_stderr: float
    positive: bool
    ratio: float | None
    ratio_stderr: float | None
    ratio_target: float | None
    ratio_relative_error: float | None
    note: str = ""


def positivity_and_ratio(curve: MeanCurve, D: float, delta: float, d: int = 2,
                         eps_range: tuple[float, float] | None = None) -> Verdict:
    """Positivity of ``min eps**(D-d) mean_d(eps)`` at 3 standard errors, and the volume/surface ratio.

    The ratio divides the logarithmic averages of the rescaled ``C_d`` and
    ``C_{d-1}`` curves; its standard error comes from the per-replicate ratios
    of the two linear functionals (delta method).
    """
    g, se = curve.rescaled(d, D)
    sel = np.ones(len(curve.eps), bool)
    if eps_range is not None:
        sel = (curve.eps >= eps_range[0] * (1 - 1e-12)) & (curve.eps <= eps_range[1] * (1 + 1e-12))
    j = int(np.argmin(np.where(sel, g, np.inf)))
    positive = bool(g[j] > 3 * se[j]) if se[j] > 0 else bool(g[j] > 0)
    if D >= d:
        return Verdict(float(g[j]), float(se[j]), positive, None, None, None, None,
                       "ratio clause skipped: D equals the ambient dimension")
    a_d = _log_average(curve.eps, curve.eps ** (D - d) * curve.samples[:, d, :], delta)
    a_m = _log_average(curve.eps, curve.eps ** (D - d + 1) * curve.samples[:, d - 1, :], delta)
    if a_m.mean() == 0:
        return Verdict(float(g[j]), float(se[j]), positive, None, None, 2.0 / (d - D), None,
                       "ratio undefined: the averaged C_{d-1} curve is zero")
    ratio = float(a_d.mean() / a_m.mean())
    n = len(a_d)
    if n > 1:
        infl = a_d / a_m.mean() - ratio * a_m / a_m.mean()
        rse = float(infl.std(ddof=1) / math.sqrt(n))
    else:
        rse = 0.0
    target = 2.0 / (d - D)
    return Verdict(float(g[j]), float(se[j]), positive, ratio, rse, target, ratio / target - 1.0)


def loglog_slope(eps: np.ndarray, values: np.ndarray, lo: float, hi: float) -> float:
    sel = (eps >= lo * (1 - 1e-12)) & (eps <= hi * (1 + 1e-12))
    return float(np.polyfit(np.log(eps[sel]), np.log(values[sel]), 1)[0])
