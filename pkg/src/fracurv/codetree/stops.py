"""Markov stops and boundary codes.

A Markov stop at scale ``r`` is the antichain of codes ``sigma`` with
``R * r_sigma <= r < R * r_parent``.  It is computed level by level on a
:class:`Forest`, deepening the trees on demand, and is returned in array form
(tree, level, index into that level, cumulative ratio).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..simgeom import Code, OpenSetSpec, distance_to_convex_boundary
from .tree import Forest, InsufficientDepthError, required_depth

# relative slack on the stopping comparison so that r = R * 2**-k stops at level k
STOP_RTOL = 1e-12


@dataclass
class MarkovStop:
    """Stop codes of every tree in a forest at one scale ``r``."""

    forest: Forest
    r: float
    R: float
    tree: np.ndarray
    level: np.ndarray
    index: np.ndarray
    ratio: np.ndarray

    def __len__(self):
        return len(self.tree)

    @property
    def codes(self) -> list[Code]:
        """Codes of the stop (all trees concatenated, in level order)."""
        out: list[Code] = []
        cache: dict[int, list[Code]] = {}
        for lev, idx in zip(self.level.tolist(), self.index.tolist()):
            if lev not in cache:
                cache[lev] = self.forest.codes(lev)
            out.append(cache[lev][idx])
        return out

    @property
    def ratios(self) -> np.ndarray:
        return self.ratio

    def for_tree(self, t: int) -> "MarkovStop":
        sel = self.tree == t
        return MarkovStop(self.forest, self.r, self.R, self.tree[sel], self.level[sel],
                          self.index[sel], self.ratio[sel])

    def maps(self):
        """Composite maps ``(a, b, reflect)`` of the stop codes."""
        n = len(self)
        a = np.empty(n, complex)
        b = np.empty(n, complex)
        refl = np.empty(n, bool)
        for lev in np.unique(self.level):
            sel = self.level == lev
            la, lb, lr = self.forest.maps(int(lev))
            idx = self.index[sel]
            a[sel], b[sel], refl[sel] = la[idx], lb[idx], lr[idx]
        return a, b, refl

    def first_letters(self) -> np.ndarray:
        """First code letter of each stop code (0 for the root)."""
        out = np.zeros(len(self), np.int64)
        for lev in np.unique(self.level):
            sel = self.level == lev
            out[sel] = self.forest.levels[int(lev)].first[self.index[sel]]
        return out

    def mass(self, D: float) -> np.ndarray:
        """Per tree: the sum of ``r_sigma ** D`` over the stop."""
        return np.bincount(self.tree, weights=self.ratio**D, minlength=self.forest.n_trees)


def markov_stop(forest: Forest, r: float, R: float) -> MarkovStop:
    """The Markov stop at scale ``r`` of every tree of ``forest``."""
    if not r > 0 or not R > 0:
        raise ValueError("r and R must be positive")
    threshold = r / R * (1 + STOP_RTOL)
    trees, levels, index, ratio = [], [], [], []
    root = forest.levels[0]
    active = np.arange(len(root))
    if r >= R:
        active = np.array([], dtype=np.int64)
        trees.append(root.tree)
        levels.append(np.zeros(len(root), np.int64))
        index.append(np.arange(len(root)))
        ratio.append(root.ratio)
    k = 0
    while len(active):
        if forest.depth < k + 1:
            if not forest.can_deepen:
                raise InsufficientDepthError(required_depth(r, R, forest.table.r_max), forest.depth)
            forest.ensure_depth(k + 1)
        parent = forest.levels[k]
        child = forest.levels[k + 1]
        counts = forest.table.n_maps[parent.label[active]]
        starts = parent.child_start[active]
        kids = np.repeat(starts, counts) + (
            np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        )
        stop = child.ratio[kids] <= threshold
        sel = kids[stop]
        trees.append(child.tree[sel])
        levels.append(np.full(len(sel), k + 1, np.int64))
        index.append(sel)
        ratio.append(child.ratio[sel])
        active = kids[~stop]
        k += 1
    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
    tree = cat(trees, np.int64)
    order = np.lexsort((cat(index, np.int64), cat(levels, np.int64), tree))
    return MarkovStop(forest, float(r), float(R), tree[order], cat(levels, np.int64)[order],
                      cat(index, np.int64)[order], cat(ratio, float)[order])


def stop_polygons(stop: MarkovStop, O: OpenSetSpec) -> np.ndarray:
    """Vertices of ``f_sigma(O)`` for every stop code, shape ``(n, m, 2)``."""
    a, b, refl = stop.maps()
    z = O.vertices[:, 0] + 1j * O.vertices[:, 1]
    zz = np.where(refl[:, None], np.conj(z)[None, :], z[None, :])
    w = a[:, None] * zz + b[:, None]
    return np.stack([w.real, w.imag], axis=-1)


def boundary_codes(stop: MarkovStop, O: OpenSetSpec) -> np.ndarray:
    """Boolean mask over ``stop``: codes whose cell lies within ``2r`` of the complement of the first-level image.

    A cell ``O_sigma`` lies inside ``f_{sigma_1}(O)``, so the distance from
    ``O_sigma`` to the complement of the union of first-level images is at
    least the smallest signed distance of its vertices to the boundary of
    ``f_{sigma_1}(O)``.  Testing that lower bound against ``2r`` yields a
    superset of the exact boundary codes.  The root is always a boundary code.
    """
    forest = stop.forest
    out = np.ones(len(stop), dtype=bool)
    deep = stop.level > 0
    if not deep.any():
        return out
    polys = stop_polygons(stop, O)
    first = stop.first_letters()
    forest.ensure_depth(1)
    la, lb, lr = forest.maps(1)
    lev1 = forest.levels[1]
    z = O.vertices[:, 0] + 1j * O.vertices[:, 1]
    for j in np.nonzero(deep)[0]:
        k1 = forest.levels[0].child_start[stop.tree[j]] + first[j] - 1
        assert lev1.tree[k1] == stop.tree[j]
        zz = np.conj(z) if lr[k1] else z
        w = la[k1] * zz + lb[k1]
        outer = np.stack([w.real, w.imag], axis=-1)
        d = distance_to_convex_boundary(polys[j], outer).min()
        out[j] = d <= 2 * stop.r
    return out
