"""Shipped run configurations.

Radii are kept small relative to ``R``: the logarithmic averages hold the
rescaled curve constant above the largest radius, so a grid reaching up to
the scale of ``O`` itself is dominated by the coarse-scale plateau.
"""

from __future__ import annotations

import copy
import math

from ..codetree.models import (
    CARPET_TRANSITIONS,
    DependentGasketModel,
    MarkovCarpetModel,
    PinnedModel,
    RecursiveModel,
    carpet_labels,
    diagonal_labels,
    gasket_labels,
    nonlattice_labels,
)

UNIT_TRIANGLE = [[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3.0) / 2]]
UNIT_SQUARE = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]

_COMMON_TASKS = ["dimension", "stop_mass", "verify_a2", "mean_curve", "limits", "render"]


def _base(name: str, model, open_set, description: str) -> dict:
    return {
        "name": name,
        "description": description,
        "model": model.to_config(),
        "open_set": open_set,
        "R_slack": 0.05,
        "eps_grid": {"min": 2.0**-6, "max": 2.0**-3, "per_octave": 8},
        "r_grid": {"min_over_R": 1.0 / 256, "max_over_R": 1.0, "per_octave": 8},
        "n_mc": 30,
        "q": 0.05,
        "h_ratio": 1.0 / 32,
        "seed": 0,
        "outputs": f"fracurv-out/{name}",
        "tasks": list(_COMMON_TASKS),
        "stop_mass": {"n_mc": 2000, "n_radii": 10, "min_over_R": 1.0 / 64},
        "verify_a2": {"n_samples": 100_000, "depth": 2, "children": None},
        "limits": {"k": [0, 1, 2], "delta": None, "s_grid": [0.0], "m_max": None,
                   "n_values": None, "positivity_range": None, "plateau_from": None},
        "render": {"level": 4, "pixels": 1024},
    }


def _gasket_recursive() -> dict:
    G, _ = gasket_labels()
    cfg = _base("gasket-recursive", RecursiveModel([G], [1.0]), UNIT_TRIANGLE,
                "deterministic Sierpinski gasket (single label G)")
    cfg.update(
        n_mc=1,
        eps_grid={"min": 2.0**-9, "max": 2.0**-5, "per_octave": 8},
        tasks=["dimension", "stop_mass", "verify_a2", "mean_curve", "rk", "limits", "render"],
    )
    cfg["stop_mass"]["n_mc"] = 256
    cfg["limits"].update(delta=2.0**-9, n_values=[5, 6, 7, 8, 9])
    return cfg


def _gasket_dependent() -> dict:
    G, Gp = gasket_labels()
    return _base("gasket-dependent", DependentGasketModel([G, Gp], [0.5, 0.5], exceptional=3), UNIT_TRIANGLE,
                 "gasket with extra rotated middle map; one exceptional child per level")


def _pinned_n2() -> dict:
    return _base("pinned-n2", PinnedModel(diagonal_labels(), [0.5, 0.5], W=((1,), (2, 1))), UNIT_SQUARE,
                 "two maps per node; nodes sigma1 and sigma21 share a label")


def _carpet_markov() -> dict:
    return _base("carpet-markov", MarkovCarpetModel(carpet_labels(), CARPET_TRANSITIONS[0], CARPET_TRANSITIONS),
                 UNIT_SQUARE, "random carpet; labels along each lattice row form a Markov chain")


def _nonlattice_demo() -> dict:
    return _base("nonlattice-demo", RecursiveModel(nonlattice_labels(), [0.5, 0.5]), UNIT_SQUARE,
                 "random recursive dust with ratios 1/2 and 1/3 (non-lattice)")


_PRESETS = {
    "gasket-recursive": _gasket_recursive,
    "gasket-dependent": _gasket_dependent,
    "pinned-n2": _pinned_n2,
    "carpet-markov": _carpet_markov,
    "nonlattice-demo": _nonlattice_demo,
}

PRESET_NAMES = tuple(_PRESETS)


class UnknownPresetError(KeyError):
    def __str__(self):
        return self.args[0]


def preset(name: str) -> dict:
    """A fully populated configuration for one of :data:`PRESET_NAMES`."""
    try:
        return copy.deepcopy(_PRESETS[name]())
    except KeyError:
        raise UnknownPresetError(
            f"unknown preset {name!r}; available presets: {', '.join(PRESET_NAMES)}"
        ) from None
