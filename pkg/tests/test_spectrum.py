import math

import mpmath
import numpy as np
import pytest

from fracurv.codetree import (
    CARPET_TRANSITIONS,
    DependentGasketModel,
    HomogeneousModel,
    MarkovCarpetModel,
    PinnedModel,
    RecursiveModel,
    VVariableModel,
    carpet_labels,
    diagonal_labels,
    gasket_labels,
    nonlattice_labels,
)
from fracurv.simgeom import cutoff_R, unit_square, unit_triangle
from fracurv.spectrum import (
    ModelError,
    RatioLaw,
    as_dimension_homogeneous,
    check_stop_mass,
    eta,
    exact_level_mass,
    lattice_detect,
    solve_dimension,
    spectrum,
)

G, GP = gasket_labels()
R_TRI = cutoff_R(unit_triangle(), 0.05)
R_SQ = cutoff_R(unit_square(), 0.05)

EXAMPLE_LAW = RatioLaw((((0.5,) * 3, 0.5), ((0.5,) * 4, 0.5)))


def shipped_models():
    return {
        "gasket": RecursiveModel([G], [1.0]),
        "dependent": DependentGasketModel([G, GP], [0.5, 0.5]),
        "pinned": PinnedModel(diagonal_labels(), [0.5, 0.5]),
        "carpet": MarkovCarpetModel(carpet_labels(), CARPET_TRANSITIONS[0], CARPET_TRANSITIONS),
        "nonlattice": RecursiveModel(nonlattice_labels(), [0.5, 0.5]),
    }


def test_dimension_of_deterministic_gasket():
    assert solve_dimension(RatioLaw((((0.5,) * 3, 1.0),))) == pytest.approx(math.log(3) / math.log(2), abs=1e-12)


def test_dimension_of_mixed_gasket_law():
    assert solve_dimension(EXAMPLE_LAW) == pytest.approx(math.log2(3.5), abs=1e-12)


def test_dimension_rejects_mean_branching_at_most_one():
    with pytest.raises(ModelError):
        solve_dimension(RatioLaw((((0.5,), 1.0),)))


def test_moment_is_decreasing_around_root():
    law = RatioLaw.from_model(shipped_models()["nonlattice"])
    D = solve_dimension(law)
    assert abs(law.moment(D) - 1) < 1e-12
    vals = [law.moment(D + x) for x in np.linspace(-0.1, 0.1, 10)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_eta_for_dyadic_laws_is_ln2():
    assert eta(EXAMPLE_LAW, solve_dimension(EXAMPLE_LAW)) == pytest.approx(math.log(2), abs=1e-12)


def test_eta_non_lattice_pair_against_high_precision():
    mpmath.mp.dps = 40
    D_ref = mpmath.findroot(lambda s: mpmath.mpf(2) ** -s + mpmath.mpf(3) ** -s - 1, 0.8)
    eta_ref = mpmath.log(2) * mpmath.mpf(2) ** -D_ref + mpmath.log(3) * mpmath.mpf(3) ** -D_ref
    law = RatioLaw((((0.5, 1 / 3), 1.0),))
    D = solve_dimension(law)
    assert D == pytest.approx(float(D_ref), abs=1e-12)
    assert D == pytest.approx(0.78788, abs=1e-5)
    assert eta(law, D) == pytest.approx(float(eta_ref), abs=1e-12)
    assert eta(law, D) == pytest.approx(0.86377, abs=1e-5)


def test_eta_single_ratio_is_its_log():
    law = RatioLaw((((0.3,) * 5, 1.0),))
    assert eta(law, solve_dimension(law)) == pytest.approx(-math.log(0.3), rel=1e-12)


@pytest.mark.parametrize("ratios, expected", [
    ((0.5,), math.log(2)),
    ((0.5, 0.25), math.log(2)),
    ((0.125, 0.25, 0.5), math.log(2)),
    ((1 / 9, 1 / 3), math.log(3)),
    ((0.5, 1 / 3), None),
])
def test_lattice_detection(ratios, expected):
    law = RatioLaw(((ratios + ratios, 1.0),))
    c = lattice_detect(law)
    if expected is None:
        assert c is None
    else:
        assert c == pytest.approx(expected, rel=1e-12)
        for v in law.support():
            assert abs(v / c - round(v / c)) < 1e-9


def test_lattice_tol_range():
    with pytest.raises(ValueError):
        lattice_detect(EXAMPLE_LAW, tol=1e-3)


def test_as_dimension_examples():
    s = as_dimension_homogeneous(EXAMPLE_LAW)
    assert s == pytest.approx((math.log(3) + math.log(4)) / (2 * math.log(2)), abs=1e-12)
    assert s < solve_dimension(EXAMPLE_LAW)
    det = RatioLaw((((0.5,) * 3, 1.0),))
    assert as_dimension_homogeneous(det) == pytest.approx(solve_dimension(det), abs=1e-12)


def test_as_dimension_never_exceeds_D_on_random_laws():
    rng = np.random.default_rng(4)
    for _ in range(40):
        atoms = []
        w = rng.dirichlet(np.ones(3))
        for p in w:
            n = int(rng.integers(2, 6))
            atoms.append((tuple(rng.uniform(0.1, 0.6, n)), float(p)))
        atoms[-1] = (atoms[-1][0], 1.0 - sum(p for _, p in atoms[:-1]))
        law = RatioLaw(tuple(atoms))
        assert as_dimension_homogeneous(law) <= solve_dimension(law) + 1e-12


def test_spectrum_of_shipped_models():
    got = {k: spectrum(RatioLaw.from_model(m)) for k, m in shipped_models().items()}
    assert got["dependent"].D == pytest.approx(math.log2(3.5), abs=1e-12)
    assert got["gasket"].lattice == pytest.approx(math.log(2))
    assert got["carpet"].D == pytest.approx(math.log(3) / math.log(2), abs=1e-12)
    assert got["pinned"].D == pytest.approx(1.0, abs=1e-12)
    assert got["nonlattice"].lattice is None
    hom = spectrum(RatioLaw.from_model(HomogeneousModel([G, GP], [0.5, 0.5])), homogeneous=True)
    assert hom.as_dimension == pytest.approx(1.7924812503605781, abs=1e-12)
    assert set(hom.as_dict()) >= {"D", "eta", "lattice_c", "root_tol", "lattice_tol"}


def test_stop_mass_at_or_above_R_is_exactly_one():
    res = check_stop_mass(shipped_models()["dependent"], R_TRI, R_TRI, n_mc=200)
    assert res.mean == 1.0 and res.stderr == 0.0


def test_stop_mass_deterministic_gasket_is_exact():
    for r in (R_TRI / 3, R_TRI / 8, R_TRI / 50):
        res = check_stop_mass(shipped_models()["gasket"], r, R_TRI, n_mc=100)
        assert res.mean == pytest.approx(1.0, abs=1e-12)
        assert res.stderr < 1e-13


def test_stop_mass_dependent_gasket_at_R_over_8():
    res = check_stop_mass(shipped_models()["dependent"], R_TRI / 8, R_TRI, n_mc=10_000, seed=3)
    assert abs(res.mean - 1) <= 3 * res.stderr


@pytest.mark.parametrize("name", ["dependent", "pinned", "carpet", "nonlattice"])
def test_stop_mass_over_a_radius_range(name):
    model = shipped_models()[name]
    R = R_TRI if name == "dependent" else R_SQ
    for j, r in enumerate(R * np.geomspace(1.0, 0.01, 20)):
        res = check_stop_mass(model, r, R, n_mc=1000, seed=j)
        assert abs(res.mean - 1) <= 3 * res.stderr + 1e-12, (r, res)


def test_stop_mass_needs_enough_replicates():
    with pytest.raises(ValueError):
        check_stop_mass(shipped_models()["gasket"], 0.1, R_TRI, n_mc=10)


@pytest.mark.parametrize("name", ["gasket", "dependent", "pinned", "carpet", "nonlattice"])
def test_exact_level_mass_is_one(name):
    model = shipped_models()[name]
    for n in (1, 2, 3):
        assert exact_level_mass(model, n) == pytest.approx(1.0, abs=1e-12)


def test_exact_level_mass_other_kinds():
    hom = HomogeneousModel([G, GP], [0.25, 0.75])
    for n in (1, 2, 3):
        assert exact_level_mass(hom, n) == pytest.approx(1.0, abs=1e-12)
    vv = VVariableModel([G, GP], [0.5, 0.5], V=2)
    for n in (1, 2):
        assert exact_level_mass(vv, n) == pytest.approx(1.0, abs=1e-12)


def test_exact_level_mass_detects_wrong_exponent():
    model = shipped_models()["dependent"]
    assert exact_level_mass(model, 2, D=1.7) > 1.0
