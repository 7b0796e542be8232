"""Tree models: how labels are assigned across the code tree.

All models share a finite label alphabet and a marginal law ``probs``; the
kinds differ only in the dependency structure between nodes.  ``draw_labels``
fills in the labels of one freshly created level of a :class:`Forest`, using a
generator keyed by ``(seed, level)``.
"""

from __future__ import annotations

import math
from typing import Any, Sequence

import numpy as np

from ..simgeom import Similarity
from .tree import LabelTable, Rifs

KINDS = (
    "recursive",
    "homogeneous",
    "v_variable",
    "dependent_gasket",
    "pinned",
    "markov_carpet",
    "copy_first_child",
)

# rows l = 0..4 (0: no left neighbour), columns j = 1..4
CARPET_TRANSITIONS = (
    (0.25, 0.25, 0.25, 0.25),
    (0.25, 0.25, 0.25, 0.25),
    (0.5, 0.25, 0.0, 0.25),
    (0.25, 0.25, 0.25, 0.25),
    (0.0, 0.25, 0.5, 0.25),
)


class ConfigurationError(ValueError):
    pass


def _categorical(rng: np.random.Generator, cum: np.ndarray, size) -> np.ndarray:
    u = rng.random(size)
    return np.minimum(np.searchsorted(cum, u, side="right"), len(cum) - 1)


class TreeModel:
    """Base class; subclasses implement :meth:`draw_labels`."""

    kind = "recursive"

    def __init__(self, labels: Sequence[Rifs], probs: Sequence[float] | None = None, **params):
        self.labels = list(labels)
        if not self.labels:
            raise ConfigurationError("model needs at least one label")
        if probs is None:
            probs = [1.0 / len(self.labels)] * len(self.labels)
        self.probs = np.asarray(probs, dtype=float)
        if self.probs.shape != (len(self.labels),):
            raise ConfigurationError("probs must have one entry per label")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1) > 1e-12:
            raise ConfigurationError("label probabilities must be non-negative and sum to 1")
        self.cum = np.cumsum(self.probs)
        self.cum[-1] = 1.0
        self.params = params
        self.table = LabelTable(self.labels)

    # -- configuration -----------------------------------------------------
    @property
    def r_min(self) -> float:
        return self.table.r_min

    @property
    def r_max(self) -> float:
        return self.table.r_max

    @property
    def mean_n(self) -> float:
        return float(np.dot(self.probs, self.table.n_maps))

    def ratio_atoms(self) -> list[tuple[tuple[float, ...], float]]:
        """Marginal law of the ratio vector of one label."""
        return [(lab.ratios, float(p)) for lab, p in zip(self.labels, self.probs) if p > 0]

    def to_config(self) -> dict[str, Any]:
        cfg = {
            "kind": self.kind,
            "labels": [
                {"name": lab.name, "maps": [f.as_dict() for f in lab.maps]} for lab in self.labels
            ],
            "probs": [float(p) for p in self.probs],
        }
        cfg.update(self._params_config())
        return cfg

    def _params_config(self) -> dict:
        return {}

    def draw_labels(self, forest, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def draw_marginal(self, rng, size) -> np.ndarray:
        return _categorical(rng, self.cum, size)

    def __repr__(self):
        names = ",".join(lab.name or str(i) for i, lab in enumerate(self.labels))
        return f"{type(self).__name__}(labels=[{names}])"


class RecursiveModel(TreeModel):
    """All labels i.i.d. (random recursive construction)."""

    kind = "recursive"

    def draw_labels(self, forest, n, rng):
        return self.draw_marginal(rng, len(forest.levels[n]))


class HomogeneousModel(TreeModel):
    """One label per level, levels independent."""

    kind = "homogeneous"

    def draw_labels(self, forest, n, rng):
        per_tree = self.draw_marginal(rng, forest.n_trees)
        return per_tree[forest.levels[n].tree]


class VVariableModel(TreeModel):
    """``V`` i.i.d. labels per level; each node picks one through a uniform i.i.d. type."""

    kind = "v_variable"

    def __init__(self, labels, probs=None, V: int = 2, **params):
        super().__init__(labels, probs, **params)
        self.V = int(V)
        if self.V < 1:
            raise ConfigurationError("V must be a positive integer")

    def _params_config(self):
        return {"V": self.V}

    def draw_labels(self, forest, n, rng):
        lev = forest.levels[n]
        pool = self.draw_marginal(rng, (forest.n_trees, self.V))
        types = rng.integers(0, self.V, size=len(lev))
        return pool[lev.tree, types]


class DependentGasketModel(TreeModel):
    """Two labels; siblings share one label except the one at the level-wide position ``M_n``.

    For every parent ``sigma`` a label ``G_sigma`` is drawn from the marginal
    law; child ``M_n`` receives ``G_sigma`` and the other children the other
    label.  ``M_n`` is uniform on ``1..exceptional`` and shared by the whole
    level of a tree.
    """

    kind = "dependent_gasket"

    def __init__(self, labels, probs=None, exceptional: int = 3, **params):
        super().__init__(labels, probs, **params)
        if len(self.labels) != 2:
            raise ConfigurationError("dependent_gasket needs exactly two labels")
        self.exceptional = int(exceptional)

    def _params_config(self):
        return {"exceptional": self.exceptional}

    def draw_labels(self, forest, n, rng):
        lev = forest.levels[n]
        if n == 0:
            return self.draw_marginal(rng, len(lev))
        m = rng.integers(1, self.exceptional + 1, size=forest.n_trees)
        g = self.draw_marginal(rng, len(forest.levels[n - 1]))
        own = g[lev.parent]
        return np.where(lev.letter == m[lev.tree], own, 1 - own)


class PinnedModel(TreeModel):
    """Constant branching; for every node ``sigma`` the nodes ``sigma w``, ``w`` in ``W``, share a label.

    The shared label is the one drawn for the shortest (then lexicographically
    first) word of ``W``.  All other labels are i.i.d.
    """

    kind = "pinned"

    def __init__(self, labels, probs=None, W: Sequence[Sequence[int]] = ((1,), (2, 1)), **params):
        super().__init__(labels, probs, **params)
        if len(set(self.table.n_maps.tolist())) != 1:
            raise ConfigurationError("pinned model needs a constant number of maps")
        words = sorted((tuple(int(x) for x in w) for w in W), key=lambda w: (len(w), w))
        if len(words) < 2:
            raise ConfigurationError("W needs at least two words")
        for a in words:
            for b in words:
                if a != b and b[: len(a)] == a:
                    raise ConfigurationError("W must not contain a word and one of its prefixes")
        self.W = words

    def _params_config(self):
        return {"W": [list(w) for w in self.W]}

    def draw_labels(self, forest, n, rng):
        lev = forest.levels[n]
        labels = self.draw_marginal(rng, len(lev))
        primary = self.W[0]
        for w in self.W[1:]:
            m = len(w)
            if n < m:
                continue
            # walk up m levels, checking that the trailing letters spell w
            idx = np.arange(len(lev))
            match = np.ones(len(lev), dtype=bool)
            for step in range(m):
                k = n - step
                match &= forest.levels[k].letter[idx] == w[m - 1 - step]
                idx = forest.levels[k].parent[idx]
            if not match.any():
                continue
            src = idx[match]
            base = n - m
            for step, letter in enumerate(primary):
                src = forest.levels[base + step].child_start[src] + letter - 1
            target = base + len(primary)
            labels[match] = labels[src] if target == n else forest.levels[target].label[src]
        return labels


class MarkovCarpetModel(TreeModel):
    """Labels of each level form independent Markov chains along horizontal lattice rows.

    A node's label depends only on the label of its left neighbour square at the
    same level (row ``0`` of ``transition`` when there is none).  Squares are
    located through their composite maps on the dyadic lattice.
    """

    kind = "markov_carpet"

    def __init__(self, labels, probs=None, transition=CARPET_TRANSITIONS, **params):
        super().__init__(labels, probs, **params)
        t = np.asarray(transition, dtype=float)
        if t.shape != (len(self.labels) + 1, len(self.labels)):
            raise ConfigurationError(
                f"transition table must be {len(self.labels) + 1}x{len(self.labels)}"
            )
        if np.any(t < 0) or np.any(np.abs(t.sum(1) - 1) > 1e-12):
            raise ConfigurationError("transition rows must be probability vectors")
        if not np.allclose(t[0], self.probs):
            raise ConfigurationError("row l=0 of the transition table must equal the marginal law")
        self.transition = t
        self.tcum = np.cumsum(t, axis=1)
        self.tcum[:, -1] = 1.0
        self.scale = 1.0 / self.r_max
        if self.r_min != self.r_max:
            raise ConfigurationError("markov_carpet needs a single contraction ratio")

    def _params_config(self):
        return {"transition": self.transition.tolist()}

    def lattice_positions(self, forest, n):
        a, b, refl = forest.maps(n)
        centre = a * (0.5 + 0.5j) + b
        s = self.scale**n
        ix = np.floor(centre.real * s).astype(np.int64)
        iy = np.floor(centre.imag * s).astype(np.int64)
        return ix, iy

    def draw_labels(self, forest, n, rng):
        lev = forest.levels[n]
        size = len(lev)
        if n == 0:
            return _categorical(rng, self.tcum[0], size)
        ix, iy = self.lattice_positions(forest, n)
        order = np.lexsort((ix, -iy, lev.tree))
        t, x, y = lev.tree[order], ix[order], iy[order]
        u = rng.random(size)
        linked = np.zeros(size, dtype=bool)
        linked[1:] = (t[1:] == t[:-1]) & (y[1:] == y[:-1]) & (x[1:] == x[:-1] + 1)
        run_start = np.where(~linked, np.arange(size), 0)
        run_start = np.maximum.accumulate(run_start)
        pos = np.arange(size) - run_start
        lab_sorted = np.zeros(size, dtype=np.int64)
        by_pos = np.argsort(pos, kind="stable")
        bounds = np.searchsorted(pos[by_pos], np.arange(pos.max() + 2))
        for p in range(pos.max() + 1):
            idx = by_pos[bounds[p]: bounds[p + 1]]
            prev = lab_sorted[idx - 1] + 1 if p > 0 else np.zeros(len(idx), dtype=np.int64)
            cum = self.tcum[prev]
            lab_sorted[idx] = np.minimum((u[idx, None] >= cum).sum(1), len(self.labels) - 1)
        labels = np.empty(size, dtype=np.int64)
        labels[order] = lab_sorted
        return labels


class CopyFirstChildModel(TreeModel):
    """Negative control: labels of ``base``, then every first child copies its parent's label.

    This breaks back-path independence on purpose.
    """

    kind = "copy_first_child"

    def __init__(self, base: TreeModel):
        super().__init__(base.labels, base.probs)
        self.base = base

    def to_config(self):
        return {"kind": self.kind, "base": self.base.to_config()}

    def draw_labels(self, forest, n, rng):
        labels = self.base.draw_labels(forest, n, rng)
        if n == 0:
            return labels
        lev = forest.levels[n]
        first = lev.letter == 1
        labels = np.asarray(labels).copy()
        labels[first] = forest.levels[n - 1].label[lev.parent[first]]
        return labels


_REGISTRY = {
    cls.kind: cls
    for cls in (
        RecursiveModel,
        HomogeneousModel,
        VVariableModel,
        DependentGasketModel,
        PinnedModel,
        MarkovCarpetModel,
    )
}


def rifs_from_config(d) -> Rifs:
    return Rifs(tuple(Similarity.from_dict(m) for m in d["maps"]), str(d.get("name", "")))


def model_from_config(cfg: dict) -> TreeModel:
    kind = cfg.get("kind")
    if kind == "copy_first_child":
        return CopyFirstChildModel(model_from_config(cfg["base"]))
    if kind not in _REGISTRY:
        raise ConfigurationError(f"unknown model kind {kind!r}; expected one of {', '.join(KINDS)}")
    labels = [rifs_from_config(d) for d in cfg.get("labels", [])]
    extra = {k: v for k, v in cfg.items() if k not in ("kind", "labels", "probs")}
    return _REGISTRY[kind](labels, cfg.get("probs"), **extra)


# -- the shipped label alphabets ---------------------------------------------

SQRT3 = math.sqrt(3.0)


def gasket_labels() -> tuple[Rifs, Rifs]:
    """``G`` (three corner maps) and ``G'`` (adds the rotated middle map)."""
    g1 = Similarity(0.5)
    g2 = Similarity(0.5, translation=(0.5, 0.0))
    g3 = Similarity(0.5, translation=(0.25, SQRT3 / 4))
    g4 = Similarity(0.5, rotation=math.pi / 3, translation=(0.5, 0.0))
    return Rifs((g1, g2, g3), "G"), Rifs((g1, g2, g3, g4), "G'")


def carpet_maps() -> tuple[Similarity, ...]:
    """``g_1..g_4``: top-left, top-right, bottom-left, bottom-right quarter of the unit square."""
    return (
        Similarity(0.5, translation=(0.0, 0.5)),
        Similarity(0.5, translation=(0.5, 0.5)),
        Similarity(0.5, translation=(0.0, 0.0)),
        Similarity(0.5, translation=(0.5, 0.0)),
    )


def carpet_labels() -> list[Rifs]:
    g = carpet_maps()
    return [Rifs(tuple(g[m] for m in range(4) if m != j), f"G{j + 1}") for j in range(4)]


def diagonal_labels() -> list[Rifs]:
    """Two-map labels on the unit square: main diagonal or anti-diagonal quarters."""
    return [
        Rifs((Similarity(0.5), Similarity(0.5, translation=(0.5, 0.5))), "diag"),
        Rifs((Similarity(0.5, translation=(0.5, 0.0)), Similarity(0.5, translation=(0.0, 0.5))), "anti"),
    ]


def nonlattice_labels() -> list[Rifs]:
    """Two-map labels with ratios 1/2 and 1/3 in opposite corners of the unit square."""
    third = 1.0 / 3.0
    return [
        Rifs((Similarity(0.5), Similarity(third, translation=(2 * third, 2 * third))), "A"),
        Rifs((Similarity(0.5, translation=(0.0, 0.5)), Similarity(third, translation=(2 * third, 0.0))), "B"),
    ]

