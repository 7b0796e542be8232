"""Statistical checks of back-path independence and of the Markov carpet law.

``test_a2`` compares the law of the subtree below child ``i`` (truncated) with
the law of the whole tree and tests its independence from the realized map on
the edge into it.  Both are chi-square tests on contingency tables of
truncated-tree states; columns with small expected counts are pooled.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2_contingency

from ..rng import replicate_seed
from .models import MarkovCarpetModel, TreeModel
from .tree import Forest

MIN_EXPECTED = 5.0


@dataclass
class A2Report:
    p_marginal: float
    p_independence: float
    n_trees: int
    n_conditioned: int
    n_states: int
    reason: str = ""
    details: dict = field(default_factory=dict)


def _subtree_states(forest: Forest, roots_level: int, roots: np.ndarray, depth: int) -> list[tuple]:
    """Label sequences of the subtrees rooted at ``roots`` over ``depth`` levels, in code order.

    Descendants of a node occupy one contiguous index range per level, so each
    level contributes a slice.
    """
    lo = roots.astype(np.int64)
    hi = lo + 1
    parts = []
    for k in range(roots_level, roots_level + depth):
        lev = forest.levels[k]
        parts.append((lev.label, lo.copy(), hi.copy()))
        if k + 1 < roots_level + depth:
            counts = forest.table.n_maps[lev.label]
            csum = np.concatenate([[0], np.cumsum(counts)])
            lo, hi = csum[lo], csum[hi]
    states = []
    for t in range(len(roots)):
        s: tuple = ()
        for labels, l, h in parts:
            s += (-1,) + tuple(labels[l[t]:h[t]].tolist())
        states.append(s)
    return states


def _pool_columns(table: np.ndarray) -> np.ndarray:
    """Merge columns whose expected counts fall below ``MIN_EXPECTED`` into one column."""
    table = table[:, table.sum(0) > 0]
    table = table[table.sum(1) > 0]
    if table.size == 0:
        return table
    expected_min = table.sum(0) * table.sum(1).min() / table.sum()
    small = expected_min < MIN_EXPECTED
    if small.any():
        pooled = table[:, small].sum(1, keepdims=True)
        table = np.hstack([table[:, ~small], pooled])
        if table[:, -1].sum() == 0:
            table = table[:, :-1]
    return table


def chi2_p(table: np.ndarray) -> float:
    """Chi-square p-value of a contingency table; degenerate tables give 1."""
    table = _pool_columns(np.asarray(table, dtype=float))
    if table.ndim != 2 or min(table.shape) < 2:
        return 1.0
    return float(chi2_contingency(table, correction=False).pvalue)


def _table(rows: list, cols: list) -> np.ndarray:
    rkeys = {k: i for i, k in enumerate(sorted(set(rows)))}
    ckeys = {k: i for i, k in enumerate(sorted(set(cols)))}
    t = np.zeros((len(rkeys), len(ckeys)))
    for (r, c), n in Counter(zip(rows, cols)).items():
        t[rkeys[r], ckeys[c]] += n
    return t


def map_category(a: complex, b: complex, refl: bool, digits: int = 9) -> tuple:
    return (round(a.real, digits), round(a.imag, digits), round(b.real, digits),
            round(b.imag, digits), bool(refl))


def test_a2(model: TreeModel, i: int, n_samples: int = 100_000, depth: int = 2,
            seed: int = 0) -> A2Report:
    """Chi-square checks of back-path independence at child ``i``.

    ``p_marginal`` compares the truncated subtree below ``i`` (given that
    child ``i`` exists) with an independent sample of truncated whole trees;
    ``p_independence`` tests that subtree against the realized map ``f_i``.
    """
    if not 1 <= depth <= 3:
        raise ValueError("depth must be between 1 and 3 (truncated state space must be enumerable)")
    if i < 1:
        raise ValueError("child index i must be a positive integer")
    whole = Forest(model, n_samples, replicate_seed(seed, 0, stream=0xA2), depth=max(depth - 1, 0))
    whole_states = _subtree_states(whole, 0, np.arange(n_samples), depth)
    below = Forest(model, n_samples, replicate_seed(seed, 1, stream=0xA2), depth=depth)
    root = below.levels[0]
    has_i = below.table.n_maps[root.label] >= i
    roots = np.nonzero(has_i)[0]
    if len(roots) == 0:
        return A2Report(1.0, 1.0, n_samples, 0, 0, reason=f"no label has {i} maps")
    child = root.child_start[roots] + i - 1
    sub_states = _subtree_states(below, 1, child, depth)
    t = below.table
    lab = root.label[roots]
    cats = [map_category(a, b, r) for a, b, r in
            zip(t.a[lab, i - 1], t.b[lab, i - 1], t.refl[lab, i - 1])]
    marg = _table(["whole"] * len(whole_states) + ["below"] * len(sub_states),
                  whole_states + sub_states)
    indep = _table(cats, sub_states)
    return A2Report(
        p_marginal=chi2_p(marg),
        p_independence=chi2_p(indep),
        n_trees=n_samples,
        n_conditioned=len(roots),
        n_states=marg.shape[1],
        details={"n_map_values": indep.shape[0]},
    )


@dataclass
class Estimate:
    value: float
    stderr: float
    n: int


def carpet_level_dependence(model: MarkovCarpetModel, n_samples: int = 100_000,
                            seed: int = 0) -> dict[int, Estimate]:
    """Estimates of ``w_k``: the probability that the children carry labels 1, 2, 3 given root label ``k``."""
    forest = Forest(model, n_samples, replicate_seed(seed, 0, stream=0xCA), depth=1)
    root = forest.levels[0]
    lev = forest.levels[1]
    if not np.all(forest.table.n_maps[root.label] == 3):
        raise ValueError("level dependence estimate needs exactly three children per node")
    children = lev.label.reshape(n_samples, 3)
    hit = np.all(children == np.array([0, 1, 2]), axis=1)
    out = {}
    for k in range(len(model.labels)):
        sel = root.label == k
        n = int(sel.sum())
        p = float(hit[sel].mean()) if n else float("nan")
        out[k + 1] = Estimate(p, float(np.sqrt(max(p * (1 - p), 1.0 / n) / n)) if n else float("nan"), n)
    return out


def carpet_transition_counts(model: MarkovCarpetModel, n_samples: int = 100_000, level: int = 2,
                             seed: int = 0) -> np.ndarray:
    """Counts of (left-neighbour label row ``l``, label ``j``) pairs at one level.

    Row 0 collects squares without a left neighbour.
    """
    forest = Forest(model, n_samples, replicate_seed(seed, 0, stream=0xCB), depth=level)
    lev = forest.levels[level]
    ix, iy = model.lattice_positions(forest, level)
    side = np.int64(1) << np.int64(level)
    key = (lev.tree * side + iy) * side + ix
    order = np.argsort(key)
    sk = key[order]
    pos = np.searchsorted(sk, key - 1)
    has_left = (ix > 0) & (pos < len(sk)) & (sk[np.minimum(pos, len(sk) - 1)] == key - 1)
    left = np.zeros(len(lev), np.int64)
    left[has_left] = lev.label[order[pos[has_left]]] + 1
    counts = np.zeros((len(model.labels) + 1, len(model.labels)), np.int64)
    np.add.at(counts, (left, lev.label.astype(np.int64)), 1)
    return counts


def transition_frequencies(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalized frequencies and their binomial standard errors."""
    n = counts.sum(1, keepdims=True).astype(float)
    p = np.divide(counts, n, out=np.zeros(counts.shape), where=n > 0)
    se = np.sqrt(np.divide(p * (1 - p), n, out=np.zeros(counts.shape), where=n > 0))
    return p, se
test_a2.__test__ = False  # keep pytest from collecting it
