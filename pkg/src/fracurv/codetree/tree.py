"""Labeled code trees stored level by level.

A :class:`Forest` holds several independent trees generated by the same model.
Each level is a set of flat arrays: owning tree, parent index in the previous
level, the last code letter, the RIFS label id and the cumulative ratio
``r_sigma``.  Children of a node are contiguous and ordered by letter, so a code
can be resolved by walking ``child_start`` offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..rng import level_generator
from ..simgeom import Code, Similarity


class InsufficientDepthError(RuntimeError):
    def __init__(self, required: int, available: int):
        super().__init__(
            f"tree generated to depth {available} but depth {required} is required"
        )
        self.required = required
        self.available = available


@dataclass(frozen=True)
class Rifs:
    """One realized IFS (a label of the code tree)."""

    maps: tuple[Similarity, ...]
    name: str = ""

    def __post_init__(self):
        if len(self.maps) == 0:
            raise ValueError("an IFS label needs at least one map")
        object.__setattr__(self, "maps", tuple(self.maps))

    @property
    def n(self) -> int:
        return len(self.maps)

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(f.ratio for f in self.maps)


class LabelTable:
    """Array form of a finite label alphabet, indexed ``[label, letter - 1]``."""

    def __init__(self, labels: Sequence[Rifs]):
        self.labels = list(labels)
        L = len(self.labels)
        width = max(lab.n for lab in self.labels)
        self.n_maps = np.array([lab.n for lab in self.labels], dtype=np.int64)
        self.a = np.zeros((L, width), dtype=complex)
        self.b = np.zeros((L, width), dtype=complex)
        self.refl = np.zeros((L, width), dtype=bool)
        self.ratio = np.ones((L, width))
        for k, lab in enumerate(self.labels):
            for i, f in enumerate(lab.maps):
                self.a[k, i] = f.a
                self.b[k, i] = f.b
                self.refl[k, i] = f.reflect
                self.ratio[k, i] = f.ratio
        all_r = np.concatenate([np.asarray(lab.ratios) for lab in self.labels])
        self.r_min = float(all_r.min())
        self.r_max = float(all_r.max())


@dataclass
class Level:
    tree: np.ndarray
    parent: np.ndarray
    letter: np.ndarray
    label: np.ndarray
    ratio: np.ndarray
    first: np.ndarray
    child_start: np.ndarray | None = None

    def __len__(self):
        return len(self.tree)


def compose_arrays(pa, pb, prefl, a, b, refl):
    """Vectorized ``parent o f`` for complex similarities."""
    a_in = np.where(prefl, np.conj(a), a)
    b_in = np.where(prefl, np.conj(b), b)
    return pa * a_in, pa * b_in + pb, prefl ^ refl


class Forest:
    """``n_trees`` independent labeled code trees sharing one model and seed."""

    def __init__(self, model, n_trees: int = 1, seed: int = 0, depth: int = 0, rng_factory=None):
        self._rng_factory = rng_factory
        self.model = model
        self.table = model.table
        self.n_trees = int(n_trees)
        self.seed = int(seed)
        self.levels: list[Level] = []
        self._maps: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._grow_root()
        self.ensure_depth(depth)

    @property
    def depth(self) -> int:
        return len(self.levels) - 1

    @property
    def can_deepen(self) -> bool:
        return getattr(self, "_deepenable", True) and self.model is not None

    def _generator(self, level: int):
        factory = getattr(self, "_rng_factory", None) or level_generator
        return factory(self.seed, level)

    def _grow_root(self):
        n = self.n_trees
        lev = Level(
            tree=np.arange(n, dtype=np.int64),
            parent=np.full(n, -1, dtype=np.int64),
            letter=np.zeros(n, dtype=np.int16),
            label=np.zeros(n, dtype=np.int16),
            ratio=np.ones(n),
            first=np.zeros(n, dtype=np.int16),
        )
        self.levels.append(lev)
        lev.label = self.model.draw_labels(self, 0, self._generator(0)).astype(np.int16)

    def ensure_depth(self, n: int):
        if n <= self.depth:
            return
        if not self.can_deepen:
            raise InsufficientDepthError(n, self.depth)
        while self.depth < n:
            self._grow()

    def _grow(self):
        prev = self.levels[-1]
        k = len(self.levels)
        counts = self.table.n_maps[prev.label]
        prev.child_start = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        parent = np.repeat(np.arange(len(prev), dtype=np.int64), counts)
        letter = (np.arange(len(parent)) - prev.child_start[parent] + 1).astype(np.int16)
        plabel = prev.label[parent]
        lev = Level(
            tree=prev.tree[parent],
            parent=parent,
            letter=letter,
            label=np.zeros(len(parent), dtype=np.int16),
            ratio=prev.ratio[parent] * self.table.ratio[plabel, letter - 1],
            first=letter.copy() if k == 1 else prev.first[parent],
        )
        self.levels.append(lev)
        lev.label = self.model.draw_labels(self, k, self._generator(k)).astype(np.int16)

    def maps(self, n: int):
        """Composite maps ``f_sigma`` of level ``n`` as ``(a, b, reflect)`` arrays."""
        self.ensure_depth(n)
        while len(self._maps) <= n:
            k = len(self._maps)
            lev = self.levels[k]
            if k == 0:
                m = len(lev)
                self._maps.append((np.ones(m, complex), np.zeros(m, complex), np.zeros(m, bool)))
                continue
            pa, pb, pr = (x[lev.parent] for x in self._maps[k - 1])
            pl = self.levels[k - 1].label[lev.parent]
            li = lev.letter - 1
            t = self.table
            self._maps.append(compose_arrays(pa, pb, pr, t.a[pl, li], t.b[pl, li], t.refl[pl, li]))
        return self._maps[n]

    def n_children(self, n: int) -> np.ndarray:
        return self.table.n_maps[self.levels[n].label]

    def child_index(self, n: int, idx, letter) -> np.ndarray:
        """Index at level ``n + 1`` of child ``letter`` of nodes ``idx`` (``-1`` if absent)."""
        self.ensure_depth(n + 1)
        lev = self.levels[n]
        idx = np.asarray(idx)
        letter = np.asarray(letter)
        ok = (letter >= 1) & (letter <= self.table.n_maps[lev.label[idx]])
        return np.where(ok, lev.child_start[idx] + letter - 1, -1)

    def codes(self, n: int) -> list[Code]:
        out: list[Code] = [()] * len(self.levels[0])
        for k in range(1, n + 1):
            lev = self.levels[k]
            out = [out[p] + (int(l),) for p, l in zip(lev.parent, lev.letter)]
        return out

    def locate(self, code: Code, tree: int = 0) -> tuple[int, int]:
        """``(level, index)`` of ``code`` in tree ``tree``; ``KeyError`` if absent."""
        code = tuple(code)
        idx = tree
        for k, letter in enumerate(code):
            self.ensure_depth(k + 1)
            j = int(self.child_index(k, idx, letter))
            if j < 0:
                raise KeyError(code)
            idx = j
        return len(code), idx

    def tree_state(self, depth: int) -> list[tuple]:
        """Per tree: the label sequence of all nodes of level < ``depth`` in code order."""
        self.ensure_depth(max(depth - 1, 0))
        states: list[list[int]] = [[] for _ in range(self.n_trees)]
        for k in range(depth):
            lev = self.levels[k]
            for t, lab in zip(lev.tree.tolist(), lev.label.tolist()):
                states[t].append(lab)
        return [tuple(s) for s in states]


class LabeledTree(Forest):
    """A single realized code tree.

    ``nodes`` maps codes to their RIFS label for all generated levels.  Trees
    produced by :func:`shift` are re-rooted views and deepen through their
    source tree.
    """

    def __init__(self, model, seed: int = 0, depth: int = 0):
        super().__init__(model, 1, seed, depth)
        self._source: tuple[LabeledTree, Code] | None = None

    @property
    def nodes(self) -> dict[Code, Rifs]:
        out = {}
        for k in range(self.depth + 1):
            labels = self.levels[k].label
            for code, lab in zip(self.codes(k), labels):
                out[code] = self.table.labels[int(lab)]
        return out

    def label(self, code: Code) -> Rifs:
        k, i = self.locate(code)
        return self.table.labels[int(self.levels[k].label[i])]

    def ensure_depth(self, n: int):
        src = getattr(self, "_source", None)
        if src is None or n <= self.depth:
            return super().ensure_depth(n)
        base, prefix = src
        base.ensure_depth(n + len(prefix))
        fresh = _subtree(base, prefix)
        self.levels = fresh.levels
        self._maps = []

    def same_as(self, other: "LabeledTree") -> bool:
        if self.depth != other.depth:
            return False
        for a, b in zip(self.levels, other.levels):
            if not (np.array_equal(a.parent, b.parent) and np.array_equal(a.letter, b.letter)
                    and np.array_equal(a.label, b.label)):
                return False
        return True


def _subtree(tree: LabeledTree, sigma: Code) -> LabeledTree:
    k0, i0 = tree.locate(sigma)
    out = LabeledTree.__new__(LabeledTree)
    out.model = tree.model
    out.table = tree.table
    out.n_trees = 1
    out.seed = tree.seed
    out._maps = []
    out._source = None
    out._deepenable = False
    levels = []
    keep = np.array([i0], dtype=np.int64)
    for k in range(k0, tree.depth + 1):
        lev = tree.levels[k]
        if k == k0:
            new_index = keep
            parent = np.array([-1], dtype=np.int64)
        else:
            remap = np.full(len(tree.levels[k - 1]), -1, dtype=np.int64)
            remap[keep] = np.arange(len(keep))
            mask = remap[lev.parent] >= 0
            new_index = np.nonzero(mask)[0]
            parent = remap[lev.parent[new_index]]
        letter = lev.letter[new_index].copy() if k > k0 else np.zeros(1, np.int16)
        label = lev.label[new_index]
        if k == k0:
            ratio = np.ones(1)
            first = np.zeros(1, np.int16)
        else:
            pl = levels[-1].label[parent]
            ratio = levels[-1].ratio[parent] * tree.table.ratio[pl, letter - 1]
            first = letter.copy() if k == k0 + 1 else levels[-1].first[parent]
        levels.append(Level(np.zeros(len(new_index), np.int64), parent, letter, label, ratio, first))
        keep = new_index
    for k in range(len(levels) - 1):
        counts = tree.table.n_maps[levels[k].label]
        levels[k].child_start = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    out.levels = levels
    return out


def shift(tree: LabeledTree, sigma: Code) -> LabeledTree:
    """The subtree rooted at ``sigma``, re-rooted at the empty code."""
    sigma = tuple(sigma)
    if not sigma:
        return tree
    try:
        out = _subtree(tree, sigma)
    except KeyError:
        raise KeyError(f"code {sigma} is not present in the tree") from None
    if tree.can_deepen or tree._source is not None:
        base, prefix = tree._source if tree._source is not None else (tree, ())
        out._source = (base, prefix + sigma)
    return out


def required_depth(r: float, R: float, r_max: float) -> int:
    if r >= R:
        return 0
    return int(math.ceil(math.log(r / R) / math.log(r_max)))
