"""Task orchestration for one run configuration.

Tasks execute in the fixed order of :data:`~fracurv.harness.config.TASKS`;
``limits`` pulls in ``mean_curve``.  Monte-Carlo work may be spread over a
process pool, but every file is written from this process after the pool
has returned its results in replicate order, so the CSV bytes do not depend
on the number of workers.
"""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

import numpy as np

from .. import __version__
from ..codetree.models import HomogeneousModel, MarkovCarpetModel
from ..codetree.stats import (
    carpet_level_dependence,
    carpet_transition_counts,
    test_a2 as run_a2_test,
    transition_frequencies,
)
from ..codetree.stops import markov_stop, stop_polygons
from ..codetree.tree import Forest
from ..meanlimits import (
    LimitReport,
    average_limit,
    estimate_rk,
    lattice_sums,
    mean_curvature_curve,
    positivity_and_ratio,
    renewal_integral,
)
from ..rasterlab import Grid, rasterize_polygons, render_svg
from ..rng import replicate_seed
from ..spectrum import BATCH_TREES, RatioLaw, spectrum, stop_mass_samples
from . import figures
from .config import TASKS, ConfigError, canonical_text, config_hash, resolve, validate, with_defaults


class RunError(RuntimeError):
    """A task failed; the manifest on disk is flagged incomplete."""


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _pool_map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    import multiprocessing as mp

    with mp.get_context("fork").Pool(min(jobs, len(items))) as pool:
        return pool.map(fn, items, chunksize=1)


class _StopMassBatch:
    def __init__(self, model, radii, R, n_mc, seed, D):
        self.args = (model, radii, R, n_mc, seed, D)

    def __call__(self, b):
        model, radii, R, n_mc, seed, D = self.args
        lo, hi = b * BATCH_TREES, min((b + 1) * BATCH_TREES, n_mc)
        return stop_mass_samples(model, radii, R, n_mc, seed, D, batch=b)[:, lo:hi]


def planned_tasks(requested) -> list[str]:
    want = set(requested)
    if "limits" in want:
        want.add("mean_curve")
    return [t for t in TASKS if t in want]


class Runner:
    def __init__(self, cfg: dict, out: Path, jobs: int = 1):
        self.res = resolve(cfg)
        self.cfg = self.res.cfg
        self.out = Path(out)
        self.jobs = max(1, int(jobs))
        self.seed = int(self.cfg["seed"])
        self.spectrum = None
        self.curve = None
        self.rk = None
        self.manifest = {
            "name": self.cfg["name"],
            "config_hash": config_hash(self.cfg),
            "tool_version": __version__,
            "seed": self.seed,
            "spectrum": None,
            "tasks": {},
            "checks": {},
            "warnings": [],
            "complete": False,
            "error": None,
        }

    # -- bookkeeping --------------------------------------------------------------------

    def _file(self, name: str, task: str) -> Path:
        self.manifest["tasks"].setdefault(task, {"outputs": [], "seconds": None})["outputs"].append(name)
        return self.out / name

    def write_manifest(self):
        with open(self.out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")

    def execute(self) -> dict:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.json").write_text(canonical_text(self.cfg), encoding="utf-8")
        self.write_manifest()
        for task in planned_tasks(self.cfg["tasks"]):
            t0 = time.perf_counter()
            self.manifest["tasks"].setdefault(task, {"outputs": [], "seconds": None})
            try:
                getattr(self, f"task_{task}")()
            except Exception as exc:
                self.manifest["error"] = f"{task}: {type(exc).__name__}: {exc}"
                self.manifest["tasks"][task]["seconds"] = time.perf_counter() - t0
                self.write_manifest()
                raise RunError(self.manifest["error"]) from exc
            self.manifest["tasks"][task]["seconds"] = time.perf_counter() - t0
            self.write_manifest()
        self.manifest["complete"] = True
        self.write_manifest()
        return self.manifest

    def _spectrum(self):
        if self.spectrum is None:
            law = RatioLaw.from_model(self.res.model)
            self.spectrum = spectrum(law, homogeneous=isinstance(self.res.model, HomogeneousModel))
            self.manifest["spectrum"] = self.spectrum.as_dict()
        return self.spectrum

    # -- tasks ----------------------------------------------------------------------------

    def task_dimension(self):
        sp = self._spectrum()
        _write_csv(self._file("spectrum.csv", "dimension"), ["D", "eta", "lattice_c", "as_dimension"],
                   [(sp.D, sp.eta, "" if sp.lattice is None else sp.lattice,
                     "" if sp.as_dimension is None else sp.as_dimension)])

    def task_stop_mass(self):
        sp = self._spectrum()
        radii = self.res.stop_mass_radii()
        n_mc = int(self.cfg["stop_mass"]["n_mc"])
        batches = range(-(-n_mc // BATCH_TREES))
        parts = _pool_map(_StopMassBatch(self.res.model, radii, self.res.R, n_mc, self.seed, sp.D), batches, self.jobs)
        x = np.concatenate(parts, axis=1)
        mean = x.mean(1)
        se = x.std(1, ddof=1) / math.sqrt(n_mc)
        _write_csv(self._file("stop_mass.csv", "stop_mass"), ["r", "mean", "stderr", "n_mc"],
                   [(r, m, s, n_mc) for r, m, s in zip(radii, mean, se)])
        off = np.abs(mean - 1.0) > 3 * se + 1e-12
        self.manifest["checks"]["stop_mass_within_3se"] = bool(not off.any())
        if off.any():
            self.manifest["warnings"].append(f"stop mass deviates from 1 by more than 3 stderr at r = {radii[off].tolist()}")
        figures.plot_stop_mass(radii, mean, se, self._file("stop_mass.png", "stop_mass"))

    def task_verify_a2(self):
        va = self.cfg["verify_a2"]
        model = self.res.model
        children = va["children"] or list(range(1, int(model.table.n_maps.max()) + 1))
        rows = []
        for i in children:
            rep = run_a2_test(model, int(i), int(va["n_samples"]), int(va["depth"]), self.seed)
            rows.append((int(i), rep.p_marginal, rep.p_independence, rep.n_trees, rep.n_conditioned, rep.n_states))
        _write_csv(self._file("a2.csv", "verify_a2"),
                   ["child", "p_marginal", "p_independence", "n_trees", "n_conditioned", "n_states"], rows)
        low = [r[0] for r in rows if min(r[1], r[2]) <= 0.01]
        self.manifest["checks"]["a2_p_above_0.01"] = not low
        if low:
            self.manifest["warnings"].append(f"(A2) test p-value <= 0.01 at children {low}")
        if isinstance(model, MarkovCarpetModel):
            n = int(va["n_samples"])
            w = carpet_level_dependence(model, n, self.seed)
            _write_csv(self._file("carpet_level_dependence.csv", "verify_a2"), ["k", "w", "stderr", "n"],
                       [(k, e.value, e.stderr, e.n) for k, e in sorted(w.items())])
            p, se = transition_frequencies(carpet_transition_counts(model, n, 2, self.seed))
            _write_csv(self._file("carpet_transitions.csv", "verify_a2"),
                       ["left", "label", "frequency", "stderr", "table"],
                       [(l, j + 1, p[l, j], se[l, j], model.transition[l, j])
                        for l in range(p.shape[0]) for j in range(p.shape[1])])

    def task_mean_curve(self):
        sp = self._spectrum()
        n_mc = int(self.cfg["n_mc"])
        self.curve = mean_curvature_curve(self.res.model, self.res.O, self.res.R, self.res.eps, n_mc,
                                          self.res.settings, self.seed, self.jobs,
                                          min_replicates=1 if n_mc == 1 else 30)
        _write_csv(self._file("mean_curve.csv", "mean_curve"), ["eps", "k", "mean", "stderr", "n_mc"],
                   self.curve.rows())
        figures.plot_mean_curve(self.curve, sp.D, self._file("mean_curve.png", "mean_curve"))

    def task_rk(self):
        sp = self._spectrum()
        self.rk = estimate_rk(self.res.model, self.res.O, self.res.R, self.res.r_grid, int(self.cfg["n_mc"]),
                              self.res.settings, self.seed, self.jobs)
        _write_csv(self._file("rk_curve.csv", "rk"), ["r", "k", "rk", "stderr"], self.rk.rows())
        figures.plot_rk(self.rk, sp.D, self._file("rk_curve.png", "rk"))

    def task_limits(self):
        sp = self._spectrum()
        lim = self.cfg["limits"]
        curve = self.curve
        if lim["plateau_from"] is not None:
            curve = curve.restrict(0.0, float(lim["plateau_from"]))
        delta = float(lim["delta"]) if lim["delta"] is not None else float(curve.eps.min())
        reports = []
        averages = {}
        for k in lim["k"]:
            k = int(k)
            avg = average_limit(curve, k, sp.D, delta)
            averages[k] = avg.value
            rep = LimitReport(k, None, avg.value, stderr_average=avg.stderr, diagnostics={"average": avg.diagnostics})
            if self.rk is not None:
                ren = renewal_integral(self.rk, sp.D, k, sp.eta, self.res.R)
                rep.value_renewal, rep.stderr_renewal = ren.value, ren.stderr
                rep.diagnostics["renewal"] = ren.diagnostics()
                if ren.warning:
                    self.manifest["warnings"].append(f"renewal k={k}: {ren.warning}")
                if sp.lattice is not None:
                    rep.value_lattice = self._lattice_items(k, sp)
            reports.append(rep)
        rows = [row for rep in reports for row in rep.rows()]
        _write_csv(self._file("limits.csv", "limits"), ["k", "method", "value", "stderr", "diagnostics"], rows)
        rng = lim["positivity_range"]
        verdict = positivity_and_ratio(curve if rng is None else self.curve, sp.D, delta,
                                       eps_range=None if rng is None else (float(rng[0]), float(rng[1])))
        if rng is not None:
            # the ratio always uses the (possibly restricted) averaging curve
            ratio = positivity_and_ratio(curve, sp.D, delta)
            verdict.ratio, verdict.ratio_stderr = ratio.ratio, ratio.ratio_stderr
            verdict.ratio_target, verdict.ratio_relative_error = ratio.ratio_target, ratio.ratio_relative_error
        self.manifest["checks"]["positivity_and_ratio"] = vars(verdict)
        if not verdict.positive:
            self.manifest["warnings"].append("rescaled volume curve not positive at 3 stderr")
        figures.plot_mean_curve(curve, sp.D, self._file("limits.png", "limits"), averages)

    def _lattice_items(self, k, sp):
        lim = self.cfg["limits"]
        c = sp.lattice
        r_lo = float(self.rk.r.min())
        items = []
        for s in lim["s_grid"]:
            s = float(s)
            m_max = lim["m_max"]
            if m_max is None:
                m_max = int(math.floor((math.log(1.0 / r_lo) - s) / c + 1e-9))
            n_values = lim["n_values"]
            if n_values is None and self.curve is not None:
                e = self.curve.eps
                n_values = [n for n in range(0, 200)
                            if e.min() * (1 - 1e-9) <= math.exp(-(s + n * c)) <= e.max() * (1 + 1e-9)]
            (ls,) = lattice_sums(self.rk, sp.D, k, sp.eta, c, [s], int(m_max), self.curve, n_values or [])
            items.append({
                "value": float(ls.partial[-1]),
                "stderr": float(ls.partial_stderr[-1]),
                "diagnostics": {"s": s, "m_max": int(m_max), "partial": ls.partial.tolist(),
                                "partial_stderr": ls.partial_stderr.tolist(),
                                "n": ls.n_values.tolist(), "direct": ls.direct.tolist(),
                                "direct_stderr": ls.direct_stderr.tolist()},
            })
        return items

    def task_render(self):
        rd = self.cfg["render"]
        model, O = self.res.model, self.res.O
        forest = Forest(model, 1, replicate_seed(self.seed, 0, stream=0xE0))
        stop = markov_stop(forest, self.res.R * model.r_max ** int(rd["level"]), self.res.R)
        v = O.vertices
        span = float(max(np.ptp(v[:, 0]), np.ptp(v[:, 1])))
        h = span / int(rd["pixels"])
        grid = Grid.covering(v.min(0), v.max(0), h, 2 * h)
        mask = rasterize_polygons(stop_polygons(stop, O), grid)
        render_svg(mask, self._file("cover.svg", "render"))
        figures.plot_cover(mask, self._file("cover.png", "render"),
                           f"{self.cfg['name']}: {len(stop)} cells at stop scale R*{model.r_max:g}^{rd['level']}")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def run(cfg: dict, out: str | Path | None = None, jobs: int = 1, seed: int | None = None) -> dict:
    """Execute every task of ``cfg`` and return the manifest (also written to ``out/manifest.json``)."""
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    errors = validate(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    out = Path(out if out is not None else with_defaults(cfg)["outputs"])
    return Runner(cfg, out, jobs).execute()
