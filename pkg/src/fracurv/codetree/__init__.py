"""Random labeled code trees, their dependency models, Markov stops and statistical checks."""

from .models import (
    CARPET_TRANSITIONS,
    KINDS,
    ConfigurationError,
    CopyFirstChildModel,
    DependentGasketModel,
    HomogeneousModel,
    MarkovCarpetModel,
    PinnedModel,
    RecursiveModel,
    TreeModel,
    VVariableModel,
    carpet_labels,
    carpet_maps,
    diagonal_labels,
    gasket_labels,
    model_from_config,
    nonlattice_labels,
    rifs_from_config,
)
from .stats import (
    A2Report,
    carpet_level_dependence,
    carpet_transition_counts,
    test_a2,
    transition_frequencies,
)
from .stops import MarkovStop, boundary_codes, markov_stop, stop_polygons
from .tree import Forest, InsufficientDepthError, LabeledTree, Rifs, required_depth, shift


def sample_tree(model: TreeModel, stop: dict | None = None, seed: int = 0) -> LabeledTree:
    """One labeled tree, generated to ``stop["depth"]`` or until the Markov stop ``stop["markov"]`` is reached.

    ``stop["R"]`` gives the scale cutoff for a Markov stop.
    """
    stop = stop or {"depth": 0}
    if "depth" in stop:
        if stop["depth"] < 0:
            raise ValueError("depth must be non-negative")
        return LabeledTree(model, seed=seed, depth=int(stop["depth"]))
    tree = LabeledTree(model, seed=seed)
    markov_stop(tree, float(stop["markov"]), float(stop["R"]))
    return tree


__all__ = [name for name in dir() if not name.startswith("_")]
