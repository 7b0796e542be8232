"""Mean fractal curvatures of random self-similar sets generated by dependent code trees.

Submodules
----------
simgeom     similarities, open-set polygons and the scale cutoff ``R``
codetree    labeled code trees, dependency models, Markov stops, (A2) checks
spectrum    scaling exponent ``D``, ``eta`` and lattice constant; stop-mass checks
rasterlab   rasterization, exact distance transform and curvature estimators
meanlimits  Monte-Carlo mean curvature curves and limit functionals
harness     run configurations, presets and the ``fracurv`` command line
"""

__version__ = "0.1.0"
