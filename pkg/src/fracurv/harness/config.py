"""Run configuration: loading, defaults, canonical text, hashing and validation.

A configuration is a nested mapping (YAML or JSON on disk).  Its canonical
text is JSON with sorted keys, LF newlines and UTF-8, so the hash does not
depend on how the file was written or on the machine.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from ..codetree.models import ConfigurationError, TreeModel, model_from_config
from ..meanlimits import RasterSettings, geometric_grid
from ..simgeom import GeometryError, OpenSetSpec, Similarity, cutoff_R

TASKS = ("dimension", "stop_mass", "verify_a2", "mean_curve", "rk", "limits", "render")

DEFAULTS = {
    "name": "unnamed",
    "R_slack": 0.05,
    "n_mc": 30,
    "q": 0.05,
    "h_ratio": 1.0 / 32,
    "band_factor": 10.0,
    "max_side": 8192,
    "seed": 0,
    "outputs": "fracurv-out",
    "tasks": [],
    "stop_mass": {"n_mc": 10_000, "n_radii": 10, "min_over_R": 1.0 / 64},
    "verify_a2": {"n_samples": 100_000, "depth": 2, "children": None},
    "limits": {"k": [0, 1, 2], "delta": None, "s_grid": [0.0], "m_max": None,
               "n_values": None, "positivity_range": None, "plateau_from": None},
    "render": {"level": 4, "pixels": 1024},
}


class ConfigError(ValueError):
    pass


def with_defaults(cfg: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for key, val in cfg.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **val}
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return cfg


def dump_yaml(cfg: dict) -> str:
    return yaml.safe_dump(_plain(cfg), sort_keys=True, default_flow_style=None, width=100)


def _plain(obj):
    """Convert tuples and numpy scalars to plain JSON/YAML types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def canonical_text(cfg: dict) -> str:
    """Sorted-key JSON of the configuration without its output directory."""
    body = {k: v for k, v in _plain(cfg).items() if k != "outputs"}
    return json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_text(cfg).encode("utf-8")).hexdigest()


def _grid_ok(grid, name: str, errors: list[str], top: float | None = None):
    if not isinstance(grid, dict):
        errors.append(f"{name} must be a mapping with min, max, per_octave")
        return
    try:
        lo, hi, per = float(grid["min"]), float(grid["max"]), int(grid.get("per_octave", 8))
    except (KeyError, TypeError, ValueError):
        errors.append(f"{name} needs numeric min, max and per_octave")
        return
    if not 0 < lo <= hi:
        errors.append(f"{name} empty: need 0 < min <= max")
    elif top is not None and hi > top * (1 + 1e-12):
        errors.append(f"{name} max {hi!r} exceeds R = {top!r}")
    if per < 8:
        errors.append(f"{name} per_octave must be at least 8")


def _maps_of(model_cfg: dict):
    if model_cfg.get("kind") == "copy_first_child":
        yield from _maps_of(model_cfg.get("base", {}))
        return
    for lab in model_cfg.get("labels", []):
        yield from lab.get("maps", [])


def validate(cfg: dict) -> list[str]:
    """Every problem found in a configuration; empty iff the configuration is runnable."""
    errors: list[str] = []
    cfg = with_defaults(cfg)
    q, h_ratio = cfg["q"], cfg["h_ratio"]
    if not isinstance(q, (int, float)) or not 0 < q <= 0.25:
        errors.append("q out of range (0,0.25]")
    if not isinstance(h_ratio, (int, float)) or not 1 / 128 <= h_ratio <= 1 / 8:
        errors.append("h_ratio out of range [1/128,1/8]")
    if not isinstance(cfg["n_mc"], int) or cfg["n_mc"] < 1:
        errors.append("n_mc must be a positive integer")
    unknown = [t for t in cfg["tasks"] if t not in TASKS]
    if unknown:
        errors.append(f"unknown tasks {unknown}; expected a subset of {list(TASKS)}")
    if "mean_curve" in cfg["tasks"] and isinstance(cfg["n_mc"], int) and 1 < cfg["n_mc"] < 30:
        errors.append("n_mc must be 1 (deterministic model) or at least 30 for mean_curve")
    seed = cfg["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2**64:
        errors.append("seed must be an integer in [0, 2**64)")

    model_cfg = cfg.get("model")
    R = None
    if not isinstance(model_cfg, dict):
        errors.append("missing model block")
    else:
        for m in _maps_of(model_cfg):
            try:
                f = Similarity.from_dict(m)
            except (KeyError, TypeError, ValueError) as exc:
                errors.append(f"malformed similarity {m!r}: {exc}")
                continue
            if f.ratio >= 1:
                errors.append(f"contraction ratio ≥ 1 (got {f.ratio!r})")
        if not any("contraction" in e or "malformed" in e for e in errors):
            try:
                model_from_config(model_cfg)
            except (ConfigurationError, GeometryError, ValueError, KeyError, TypeError) as exc:
                errors.append(f"model: {exc}")
    try:
        O = OpenSetSpec(tuple(map(tuple, cfg["open_set"])))
        if not O.convex:
            errors.append("open_set must be convex")
        R = cutoff_R(O, float(cfg["R_slack"]))
    except KeyError:
        errors.append("missing open_set")
    except (GeometryError, TypeError, ValueError) as exc:
        errors.append(f"open_set: {exc}")
    if not isinstance(cfg["R_slack"], (int, float)) or cfg["R_slack"] <= 0:
        errors.append("R_slack must be positive")

    if "eps_grid" in cfg:
        _grid_ok(cfg["eps_grid"], "eps_grid", errors, R)
    elif {"mean_curve", "limits"} & set(cfg["tasks"]):
        errors.append("eps_grid required by mean_curve/limits")
    if "r_grid" in cfg:
        grid = cfg["r_grid"]
        scaled = None
        if isinstance(grid, dict) and R is not None:
            try:
                scaled = {"min": float(grid["min_over_R"]) * R, "max": float(grid.get("max_over_R", 1.0)) * R,
                          "per_octave": grid.get("per_octave", 8)}
            except (KeyError, TypeError, ValueError):
                errors.append("r_grid needs numeric min_over_R (and optional max_over_R, per_octave)")
        if scaled is not None:
            _grid_ok(scaled, "r_grid", errors, R)
    elif "rk" in cfg["tasks"]:
        errors.append("r_grid required by rk")
    sm = cfg["stop_mass"]
    if sm["n_mc"] < 100:
        errors.append("stop_mass.n_mc must be at least 100")
    va = cfg["verify_a2"]
    if not 1 <= va["depth"] <= 3:
        errors.append("verify_a2.depth must be 1, 2 or 3")
    return errors


@dataclass
class Resolved:
    """Objects built from a validated configuration."""

    cfg: dict
    model: TreeModel
    O: OpenSetSpec
    R: float
    settings: RasterSettings

    @property
    def eps(self) -> np.ndarray:
        g = self.cfg["eps_grid"]
        return geometric_grid(float(g["max"]), float(g["min"]), int(g.get("per_octave", 8)))

    @property
    def r_grid(self) -> np.ndarray:
        g = self.cfg["r_grid"]
        return geometric_grid(float(g.get("max_over_R", 1.0)) * self.R, float(g["min_over_R"]) * self.R,
                              int(g.get("per_octave", 8)))

    def stop_mass_radii(self) -> np.ndarray:
        sm = self.cfg["stop_mass"]
        n = int(sm["n_radii"])
        return self.R * float(sm["min_over_R"]) ** (np.arange(n) / max(n - 1, 1))


def resolve(cfg: dict) -> Resolved:
    errors = validate(cfg)
    if errors:
        raise ConfigError("; ".join(errors))
    cfg = with_defaults(cfg)
    O = OpenSetSpec(tuple(map(tuple, cfg["open_set"])))
    settings = RasterSettings(q=float(cfg["q"]), h_ratio=float(cfg["h_ratio"]),
                              max_side=int(cfg["max_side"]), band_factor=float(cfg["band_factor"]))
    return Resolved(cfg, model_from_config(cfg["model"]), O, cutoff_R(O, float(cfg["R_slack"])), settings)
