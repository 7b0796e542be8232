"""Scaling exponent ``D``, mean log-ratio ``eta`` and lattice classification of a ratio law.

The ratio law is the marginal law of the realized ratio vector ``(r_1..r_N)`` of
one node label.  ``D`` solves ``E sum_i r_i**D = 1``; ``eta`` is the mean
``E sum_i |ln r_i| r_i**D`` of the associated log-ratio distribution.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .codetree.models import TreeModel
from .codetree.stops import markov_stop
from .codetree.tree import Forest
from .rng import replicate_seed

ROOT_TOL = 1e-12
LATTICE_TOL = 1e-9
# trees per forest in Monte-Carlo loops; fixed so results never depend on scheduling
BATCH_TREES = 256


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class RatioLaw:
    """Finitely supported law of the ratio vector of one label."""

    atoms: tuple[tuple[tuple[float, ...], float], ...]

    def __post_init__(self):
        atoms = tuple((tuple(float(r) for r in rs), float(p)) for rs, p in self.atoms)
        if not atoms:
            raise ModelError("ratio law needs at least one atom")
        total = sum(p for _, p in atoms)
        if abs(total - 1.0) > 1e-12 or any(p < 0 for _, p in atoms):
            raise ModelError("atom probabilities must be non-negative and sum to 1")
        for rs, _ in atoms:
            if not rs or any(not 0 < r < 1 for r in rs):
                raise ModelError("every atom needs at least one ratio, each in (0, 1)")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_model(cls, model: TreeModel) -> "RatioLaw":
        merged: dict[tuple[float, ...], float] = {}
        for rs, p in model.ratio_atoms():
            key = tuple(sorted(rs))
            merged[key] = merged.get(key, 0.0) + p
        return cls(tuple(merged.items()))

    @property
    def mean_n(self) -> float:
        return sum(p * len(rs) for rs, p in self.atoms)

    @property
    def r_min(self) -> float:
        return min(min(rs) for rs, _ in self.atoms)

    @property
    def r_max(self) -> float:
        return max(max(rs) for rs, _ in self.atoms)

    def moment(self, s: float) -> float:
        """``E sum_i r_i**s``."""
        return sum(p * sum(r**s for r in rs) for rs, p in self.atoms)

    def moment_derivative(self, s: float) -> float:
        return sum(p * sum(math.log(r) * r**s for r in rs) for rs, p in self.atoms)

    def support(self) -> list[float]:
        """Distinct values of ``|ln r_i|`` over atoms of positive probability."""
        vals = sorted({-math.log(r) for rs, p in self.atoms if p > 0 for r in rs})
        out: list[float] = []
        for v in vals:
            if not out or v - out[-1] > 1e-14 * max(1.0, v):
                out.append(v)
        return out


@dataclass(frozen=True)
class SpectrumResult:
    D: float
    eta: float
    lattice: float | None
    as_dimension: float | None = None
    root_tol: float = ROOT_TOL
    lattice_tol: float = LATTICE_TOL

    def as_dict(self) -> dict:
        d = asdict(self)
        d["lattice_c"] = d.pop("lattice")
        return d


def _bisect(f, lo: float, hi: float, tol: float) -> float:
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo < tol:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_dimension(law: RatioLaw, tol: float = ROOT_TOL) -> float:
    """Root ``D`` of ``E sum_i r_i**s - 1`` (bisection, then two Newton steps)."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    if law.mean_n <= 1:
        raise ModelError(f"expected number of maps must exceed 1, got {law.mean_n}")
    phi = lambda s: law.moment(s) - 1.0  # noqa: E731
    hi = 1.0
    while phi(hi) >= 0:
        hi *= 2
    D = _bisect(phi, 0.0, hi, tol)
    for _ in range(2):
        d = law.moment_derivative(D)
        step = phi(D) / d
        if abs(step) < 1e-3:
            D -= step
    return D


def eta(law: RatioLaw, D: float) -> float:
    """``E sum_i |ln r_i| r_i**D``."""
    return -law.moment_derivative(D)


def lattice_detect(law: RatioLaw, tol: float = LATTICE_TOL) -> float | None:
    """Largest ``c`` with every ``|ln r_i|`` an integer multiple of ``c`` up to ``tol * max``, else ``None``."""
    if not 0 < tol <= 1e-6:
        raise ValueError("tol must lie in (0, 1e-6]")
    vals = law.support()
    cutoff = tol * max(vals)
    c = vals[0]
    for v in vals[1:]:
        a, b = max(v, c), min(v, c)
        while b > cutoff:
            a, b = b, abs(a - b * round(a / b))
        c = a
        if c <= cutoff:
            return None
    if all(abs(v - c * round(v / c)) <= cutoff for v in vals):
        return c
    return None


def as_dimension_homogeneous(law: RatioLaw, tol: float = ROOT_TOL) -> float:
    """Root of ``E ln sum_i r_i**s``: the almost-sure dimension of the homogeneous model."""
    psi = lambda s: sum(p * math.log(sum(r**s for r in rs)) for rs, p in law.atoms)  # noqa: E731
    if psi(0.0) <= 0:
        raise ModelError("E ln N must be positive")
    hi = 1.0
    while psi(hi) >= 0:
        hi *= 2
    return _bisect(psi, 0.0, hi, tol)


def spectrum(law: RatioLaw, homogeneous: bool = False) -> SpectrumResult:
    D = solve_dimension(law)
    s = as_dimension_homogeneous(law) if homogeneous else None
    return SpectrumResult(D, eta(law, D), lattice_detect(law), s)


# -- stop mass -----------------------------------------------------------------

@dataclass
class StopMass:
    r: float
    mean: float
    stderr: float
    n_mc: int


def stop_mass_samples(model: TreeModel, radii: Sequence[float], R: float, n_mc: int, seed: int,
                      D: float | None = None, batch: int | None = None) -> np.ndarray:
    """Per-tree sums of ``r_sigma**D`` over the Markov stop, shape ``(len(radii), n_mc)``.

    Trees are generated in fixed batches of ``BATCH_TREES`` so that every
    batch ``b`` has its own seed ``replicate_seed(seed, b)``; ``batch`` selects
    a subset of batches (used by parallel callers).
    """
    if D is None:
        D = solve_dimension(RatioLaw.from_model(model))
    radii = list(radii)
    n_batches = -(-n_mc // BATCH_TREES)
    out = np.empty((len(radii), n_mc))
    for b in range(n_batches) if batch is None else [batch]:
        size = min(BATCH_TREES, n_mc - b * BATCH_TREES)
        forest = Forest(model, size, replicate_seed(seed, b, stream=0x5E))
        for j, r in enumerate(sorted(range(len(radii)), key=lambda j: -radii[j])):
            stop = markov_stop(forest, radii[r], R)
            out[r, b * BATCH_TREES: b * BATCH_TREES + size] = stop.mass(D)
    return out


def check_stop_mass(model: TreeModel, r: float, R: float, n_mc: int = 10_000, seed: int = 0,
                    D: float | None = None) -> StopMass:
    """Monte-Carlo mean and standard error of ``sum_{sigma in stop} r_sigma**D``."""
    if n_mc < 100:
        raise ValueError("n_mc must be at least 100")
    x = stop_mass_samples(model, [r], R, n_mc, seed, D)[0]
    return StopMass(r, float(x.mean()), float(x.std(ddof=1) / math.sqrt(n_mc)), n_mc)


# -- exact level mass by enumeration -------------------------------------------

class _EnumeratingRNG:
    """Stand-in generator that replays one branch of the model's discrete draws.

    Uniform draws are resolved to the midpoint of a cell between consecutive
    breakpoints of the model's cumulative tables, integer draws to one value;
    each branch carries the product of the chosen cells' probabilities.
    """

    def __init__(self, script: list[int], cells: np.ndarray):
        self.script = script
        self.pos = 0
        self.cells = cells
        self.weight = 1.0
        self.choices: list[int] = []  # number of options at every draw, for branching

    def _take(self, n_options: int) -> int:
        k = self.script[self.pos] if self.pos < len(self.script) else 0
        self.pos += 1
        self.choices.append(n_options)
        return k

    def random(self, size=None):
        shape = (size,) if isinstance(size, int) else (size or ())
        n = int(np.prod(shape)) if shape else 1
        lo, hi = self.cells[:-1], self.cells[1:]
        out = np.empty(n)
        for j in range(n):
            k = self._take(len(lo))
            out[j] = 0.5 * (lo[k] + hi[k])
            self.weight *= hi[k] - lo[k]
        return out.reshape(shape) if shape else out[0]

    def integers(self, low, high=None, size=None):
        if high is None:
            low, high = 0, low
        shape = (size,) if isinstance(size, int) else (size or ())
        n = int(np.prod(shape)) if shape else 1
        out = np.empty(n, np.int64)
        for j in range(n):
            out[j] = low + self._take(high - low)
            self.weight /= high - low
        return out.reshape(shape) if shape else out[0]


def _breakpoints(model: TreeModel) -> np.ndarray:
    pts = {0.0, 1.0}
    for m in (model, getattr(model, "base", None)):
        if m is None:
            continue
        pts.update(np.round(np.asarray(m.cum, float), 15).tolist())
        if hasattr(m, "tcum"):
            pts.update(np.round(m.tcum.ravel(), 15).tolist())
    return np.array(sorted(pts))


def exact_level_mass(model: TreeModel, n: int, D: float | None = None,
                     max_branches: int = 200_000) -> float:
    """``E sum_{|sigma| = n} r_sigma**D`` by enumerating every branch of the sampler's draws.

    Labels of levels ``0..n-1`` are enumerated through a replaying generator;
    if all labels carry the same ratio multiset the level mass is deterministic
    and one realization suffices.
    """
    if D is None:
        D = solve_dimension(RatioLaw.from_model(model))
    if len({tuple(sorted(lab.ratios)) for lab in model.labels}) == 1:
        f = Forest(model, 1, 0, depth=n)
        return float((f.levels[n].ratio ** D).sum())
    cells = _breakpoints(model)
    total = 0.0
    stack: list[list[int]] = [[]]
    branches = 0
    while stack:
        script = stack.pop()
        replay = _EnumeratingRNG(script, cells)
        f = Forest(model, 1, 0, depth=max(n - 1, 0), rng_factory=lambda seed, level: replay)
        if n == 0:
            mass = 1.0
        else:
            # level-n ratios only depend on labels of levels < n
            lev = f.levels[n - 1]
            ratios = lev.ratio[:, None] * f.table.ratio[lev.label]
            valid = np.arange(f.table.ratio.shape[1])[None, :] < f.table.n_maps[lev.label][:, None]
            mass = float((ratios[valid] ** D).sum())
        total += replay.weight * mass
        branches += 1
        if branches > max_branches:
            raise ModelError("level law too large to enumerate")
        # schedule siblings of every draw made beyond the fixed script prefix
        for pos in range(len(script), len(replay.choices)):
            for k in range(1, replay.choices[pos]):
                stack.append(script + [0] * (pos - len(script)) + [k])
    return total
