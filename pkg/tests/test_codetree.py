import math

import numpy as np
import pytest
from scipy.stats import chisquare

from fracurv.codetree import (
    CARPET_TRANSITIONS,
    ConfigurationError,
    CopyFirstChildModel,
    DependentGasketModel,
    Forest,
    HomogeneousModel,
    InsufficientDepthError,
    LabeledTree,
    MarkovCarpetModel,
    PinnedModel,
    RecursiveModel,
    VVariableModel,
    boundary_codes,
    carpet_labels,
    carpet_level_dependence,
    carpet_transition_counts,
    diagonal_labels,
    gasket_labels,
    markov_stop,
    model_from_config,
    nonlattice_labels,
    sample_tree,
    shift,
    test_a2 as a2_check,
    transition_frequencies,
)
from fracurv.simgeom import cutoff_R, unit_triangle

G, GP = gasket_labels()
R_TRI = cutoff_R(unit_triangle(), 0.05)


def gasket():
    return RecursiveModel([G], [1.0])


def dependent():
    return DependentGasketModel([G, GP], [0.5, 0.5])


def carpet():
    return MarkovCarpetModel(carpet_labels(), CARPET_TRANSITIONS[0], CARPET_TRANSITIONS)


def pinned():
    return PinnedModel(diagonal_labels(), [0.5, 0.5])


# -- trees --------------------------------------------------------------------------------

def test_deterministic_gasket_depth_two_is_full_ternary_tree():
    t = sample_tree(gasket(), {"depth": 2}, seed=3)
    nodes = t.nodes
    assert len(nodes) == 1 + 3 + 9
    assert all(lab is G for lab in nodes.values())


def test_dependent_gasket_root_label_frequency():
    f = Forest(dependent(), 10_000, seed=11)
    p = float((f.levels[0].label == 0).mean())
    assert abs(p - 0.5) < 3 * math.sqrt(0.25 / 10_000)


def test_carpet_first_level_has_three_codes():
    f = Forest(carpet(), 2000, seed=5, depth=1)
    assert np.all(f.table.n_maps[f.levels[0].label] == 3)
    t = sample_tree(carpet(), {"depth": 1}, seed=1)
    assert sorted(c for c in t.nodes if len(c) == 1) == [(1,), (2,), (3,)]


def test_tree_structure_follows_label_sizes():
    t = sample_tree(dependent(), {"depth": 4}, seed=9)
    nodes = t.nodes
    for code, lab in nodes.items():
        if len(code) < 4:
            kids = [c for c in nodes if len(c) == len(code) + 1 and c[:-1] == code]
            assert sorted(k[-1] for k in kids) == list(range(1, lab.n + 1))


def test_identical_seeds_give_identical_trees():
    a = sample_tree(carpet(), {"depth": 4}, seed=77)
    b = sample_tree(carpet(), {"depth": 4}, seed=77)
    c = sample_tree(carpet(), {"depth": 4}, seed=78)
    assert a.same_as(b)
    assert not a.same_as(c)


def test_unknown_model_kind_is_a_configuration_error():
    with pytest.raises(ConfigurationError, match="unknown model kind"):
        model_from_config({"kind": "nope", "labels": [], "probs": []})


def test_model_config_round_trip():
    for m in (gasket(), dependent(), carpet(), pinned(), VVariableModel([G, GP], [0.3, 0.7], V=3),
              HomogeneousModel([G, GP], [0.5, 0.5]), CopyFirstChildModel(carpet())):
        again = model_from_config(m.to_config())
        assert type(again) is type(m)
        a = Forest(m, 50, seed=4, depth=3)
        b = Forest(again, 50, seed=4, depth=3)
        assert all(np.array_equal(x.label, y.label) for x, y in zip(a.levels, b.levels))


# -- shift ------------------------------------------------------------------------------------

def test_shift_of_root_is_identity():
    t = sample_tree(dependent(), {"depth": 3}, seed=2)
    assert shift(t, ()) is t


def test_shift_concatenation_law():
    t = sample_tree(dependent(), {"depth": 5}, seed=6)
    a = shift(shift(t, (2,)), (1, 3))
    b = shift(t, (2, 1, 3))
    assert a.nodes == b.nodes


def test_shift_of_absent_code_raises():
    t = sample_tree(gasket(), {"depth": 2}, seed=0)
    with pytest.raises(KeyError):
        shift(t, (4,))


def test_shift_deepens_through_source_tree():
    t = LabeledTree(dependent(), seed=8)
    s = shift(t, (1,)) if t.label(()).n >= 1 else None
    s.ensure_depth(3)
    t.ensure_depth(4)
    assert s.nodes == shift(t, (1,)).nodes


def test_root_label_of_shifted_recursive_tree_matches_marginal():
    model = RecursiveModel([G, GP], [0.3, 0.7])
    f = Forest(model, 10_000, seed=21, depth=1)
    first = f.levels[1].label[f.levels[0].child_start]
    counts = np.bincount(first, minlength=2)
    assert chisquare(counts, 10_000 * np.array([0.3, 0.7])).pvalue > 0.01


# -- model structure --------------------------------------------------------------------------

def test_dependent_gasket_exceptional_position_is_shared_per_level():
    f = Forest(dependent(), 50, seed=13, depth=4)
    for k in range(1, 5):
        lev = f.levels[k]
        for tree in range(50):
            positions = set()
            for parent in np.unique(lev.parent[lev.tree == tree]):
                kids = np.nonzero(lev.parent == parent)[0]
                labels = lev.label[kids].tolist()
                # exactly one child differs from all of its siblings
                odd = [int(lev.letter[j]) for j, lab in zip(kids, labels) if labels.count(lab) == 1]
                assert len(odd) == 1 and odd[0] <= 3
                positions.add(odd[0])
            assert len(positions) == 1


def test_pinned_nodes_share_labels():
    f = Forest(pinned(), 300, seed=17, depth=5)
    for k in range(0, 3):
        for i in range(len(f.levels[k])):
            a = f.child_index(k, i, 1)
            two = f.child_index(k, i, 2)
            b = f.child_index(k + 1, two, 1)
            assert f.levels[k + 1].label[a] == f.levels[k + 2].label[b]


def test_carpet_level_dependence_weights():
    w = carpet_level_dependence(carpet(), 100_000, seed=3)
    assert abs(w[1].value) <= 3 * w[1].stderr
    assert abs(w[2].value) <= 3 * w[2].stderr
    for k in (3, 4):
        assert abs(w[k].value - 4.0**-3) <= 3 * w[k].stderr


def test_carpet_transition_frequencies_match_table():
    p, se = transition_frequencies(carpet_transition_counts(carpet(), 20_000, level=2, seed=1))
    table = np.asarray(CARPET_TRANSITIONS)
    assert p[2, 0] == pytest.approx(0.5, abs=3 * se[2, 0] + 1e-12)
    assert p[2, 2] == 0.0
    ok = np.abs(p - table) <= 3 * se + 1e-12
    assert ok.all()


# -- Markov stops -------------------------------------------------------------------------------

def test_stop_at_or_above_R_is_the_root():
    t = LabeledTree(dependent(), seed=1)
    stop = markov_stop(t, R_TRI, R_TRI)
    assert stop.codes == [()]
    assert stop.ratio.tolist() == [1.0]


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_gasket_stop_at_dyadic_radius_is_a_full_level(k):
    t = LabeledTree(gasket(), seed=0)
    stop = markov_stop(t, R_TRI * 2.0**-k, R_TRI)
    assert len(stop) == 3**k
    assert set(len(c) for c in stop.codes) == {k}
    np.testing.assert_allclose(stop.ratio, 2.0**-k)


def test_stop_is_an_antichain_and_covers_every_branch():
    rng = np.random.default_rng(0)
    for model in (dependent(), carpet(), RecursiveModel(nonlattice_labels(), [0.5, 0.5])):
        for seed in range(5):
            r = R_TRI * rng.uniform(0.01, 0.5)
            t = LabeledTree(model, seed=seed)
            stop = markov_stop(t, r, R_TRI)
            codes = set(stop.codes)
            for c in codes:
                assert not any(c[:j] in codes for j in range(len(c)))
            ratios = stop.ratio
            assert np.all(R_TRI * ratios <= r * (1 + 1e-12))
            # parents of stop codes are above the threshold
            for c in stop.codes:
                if c:
                    k, i = t.locate(c[:-1])
                    assert R_TRI * t.levels[k].ratio[i] > r
            # every node of the deepest stop level has exactly one ancestor in the stop
            depth = max(len(c) for c in codes)
            for leaf in t.codes(depth):
                assert sum(leaf[:j] in codes for j in range(len(leaf) + 1)) == 1


def test_insufficient_depth_names_required_depth():
    t = LabeledTree(gasket(), seed=0, depth=2)
    s = shift(t, (1,))
    s._source = None
    s._deepenable = False
    with pytest.raises(InsufficientDepthError, match="depth 4 is required"):
        markov_stop(s, R_TRI / 16, R_TRI)


def test_boundary_codes_at_root_and_subset():
    t = LabeledTree(gasket(), seed=0)
    root = markov_stop(t, 2 * R_TRI, R_TRI)
    assert boundary_codes(root, unit_triangle()).tolist() == [True]
    stop = markov_stop(t, R_TRI / 64, R_TRI)
    mask = boundary_codes(stop, unit_triangle())
    assert mask.shape == (len(stop),)


def test_boundary_code_counts_for_gasket():
    t = LabeledTree(gasket(), seed=0)
    coarse = markov_stop(t, R_TRI / 8, R_TRI)
    # 2r exceeds the inradius of every first-level triangle, so no code is interior yet
    assert boundary_codes(coarse, unit_triangle()).sum() == 27
    fine = markov_stop(t, R_TRI / 64, R_TRI)
    assert boundary_codes(fine, unit_triangle()).sum() < len(fine) == 729


# -- (A2) checks (small samples; the full-size runs live in the acceptance suite) -------------

def test_a2_recursive_model_passes():
    rep = a2_check(RecursiveModel([G, GP], [0.5, 0.5]), 1, 20_000, 2, seed=1)
    assert rep.p_marginal > 0.01 and rep.p_independence > 0.01


def test_a2_planted_violation_is_detected():
    rep = a2_check(CopyFirstChildModel(carpet()), 1, 20_000, 2, seed=1)
    assert rep.p_independence < 0.01


def test_a2_rejects_bad_arguments():
    with pytest.raises(ValueError):
        a2_check(gasket(), 1, 100, depth=4)
    with pytest.raises(ValueError):
        a2_check(gasket(), 0, 100)
