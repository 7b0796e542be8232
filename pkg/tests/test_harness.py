import csv
import hashlib
import json
import math

import pytest
import yaml

from fracurv.harness import PRESET_NAMES, ConfigError, canonical_text, config_hash, preset, run, validate
from fracurv.harness.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, main
from fracurv.harness.config import with_defaults
from fracurv.harness.presets import UnknownPresetError
from fracurv.harness.run import RunError


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def small(name, **changes):
    cfg = preset(name)
    cfg.update(changes)
    return cfg


# -- configuration ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_validate(name):
    assert validate(preset(name)) == []


def test_unknown_preset_lists_available():
    with pytest.raises(UnknownPresetError) as exc:
        preset("nope")
    assert all(n in str(exc.value) for n in PRESET_NAMES)


def test_carpet_preset_transition_rows():
    t = preset("carpet-markov")["model"]["transition"]
    assert t[2] == [0.5, 0.25, 0.0, 0.25]
    assert t[4] == [0.0, 0.25, 0.5, 0.25]
    assert all(math.isclose(sum(row), 1.0) for row in t)


def test_gasket_dependent_preset_labels():
    m = preset("gasket-dependent")["model"]
    assert m["kind"] == "dependent_gasket"
    assert [len(lab["maps"]) for lab in m["labels"]] == [3, 4]
    assert m["probs"] == [0.5, 0.5]


@pytest.mark.parametrize("change, message", [
    ({"q": 0.3}, "q out of range (0,0.25]"),
    ({"h_ratio": 0.5}, "h_ratio out of range [1/128,1/8]"),
    ({"n_mc": 10}, "at least 30 for mean_curve"),
    ({"tasks": ["dimension", "fly"]}, "unknown tasks"),
    ({"eps_grid": {"min": 0.01, "max": 5.0, "per_octave": 8}}, "exceeds R"),
    ({"eps_grid": {"min": 0.01, "max": 0.1, "per_octave": 4}}, "per_octave must be at least 8"),
    ({"eps_grid": {"min": 0.2, "max": 0.1, "per_octave": 8}}, "eps_grid empty"),
    ({"seed": -1}, "seed must be"),
    ({"open_set": [[0, 0], [1, 0], [1, 1], [0.9, 0.2]]}, "convex"),
])
def test_validate_reports_problem(change, message):
    cfg = preset("nonlattice-demo")
    cfg.update(change)
    errors = validate(cfg)
    assert any(message in e for e in errors), errors


def test_validate_rejects_expanding_map():
    cfg = preset("nonlattice-demo")
    cfg["model"]["labels"][0]["maps"][0]["ratio"] = 1.5
    assert any("contraction ratio ≥ 1" in e for e in validate(cfg))


def test_validate_reports_missing_model():
    cfg = preset("nonlattice-demo")
    del cfg["model"]
    assert "missing model block" in validate(cfg)


def test_config_hash_ignores_key_order_and_output_dir():
    a = preset("pinned-n2")
    b = json.loads(json.dumps(a))
    b = dict(reversed(list(b.items())))
    b["outputs"] = "elsewhere"
    assert canonical_text(a) == canonical_text(b)
    assert config_hash(a) == config_hash(b)
    b["seed"] = 1
    assert config_hash(a) != config_hash(b)


def test_defaults_fill_nested_blocks():
    cfg = with_defaults({"stop_mass": {"n_mc": 500}})
    assert cfg["stop_mass"] == {"n_mc": 500, "n_radii": 10, "min_over_R": 1.0 / 64}
    assert cfg["q"] == 0.05


# -- runs ----------------------------------------------------------------------------------------

def test_dimension_task(tmp_path):
    m = run(small("gasket-recursive", tasks=["dimension"]), out=tmp_path)
    assert m["complete"] and m["error"] is None
    assert m["spectrum"]["D"] == pytest.approx(math.log(3) / math.log(2), abs=1e-9)
    (row,) = read_csv(tmp_path / "spectrum.csv")
    assert float(row["D"]) == pytest.approx(math.log2(3), abs=1e-9)
    assert float(row["lattice_c"]) == pytest.approx(math.log(2))
    saved = json.loads((tmp_path / "manifest.json").read_text())
    assert saved["config_hash"] == config_hash(with_defaults(small("gasket-recursive", tasks=["dimension"])))
    assert saved["config_hash"] == hashlib.sha256((tmp_path / "config.json").read_bytes()).hexdigest()


def test_empty_task_list(tmp_path):
    m = run(small("carpet-markov", tasks=[]), out=tmp_path)
    assert m["complete"] and m["tasks"] == {}
    assert (tmp_path / "config.json").exists()


def test_seed_override_changes_hash(tmp_path):
    cfg = small("gasket-recursive", tasks=[])
    a = run(cfg, out=tmp_path / "a")
    b = run(cfg, out=tmp_path / "b", seed=9)
    assert b["seed"] == 9 and a["config_hash"] != b["config_hash"]


def test_verify_a2_on_carpet_writes_tables(tmp_path):
    cfg = small("carpet-markov", tasks=["verify_a2"])
    cfg["verify_a2"] = {"n_samples": 20_000, "depth": 2, "children": [1]}
    m = run(cfg, out=tmp_path)
    (row,) = read_csv(tmp_path / "a2.csv")
    assert row["child"] == "1" and 0 <= float(row["p_marginal"]) <= 1
    trans = read_csv(tmp_path / "carpet_transitions.csv")
    assert len(trans) == 20
    w = {int(r["k"]): float(r["w"]) for r in read_csv(tmp_path / "carpet_level_dependence.csv")}
    assert w[1] < 0.01
    assert "a2_p_above_0.01" in m["checks"]


def test_stop_mass_and_render(tmp_path):
    cfg = small("nonlattice-demo", tasks=["stop_mass", "render"])
    cfg["stop_mass"] = {"n_mc": 400, "n_radii": 3, "min_over_R": 1 / 8}
    cfg["render"] = {"level": 3, "pixels": 128}
    m = run(cfg, out=tmp_path)
    rows = read_csv(tmp_path / "stop_mass.csv")
    assert len(rows) == 3 and all(r["n_mc"] == "400" for r in rows)
    assert m["checks"]["stop_mass_within_3se"]
    for name in ("stop_mass.png", "cover.svg", "cover.png"):
        assert (tmp_path / name).stat().st_size > 0
    assert "<svg" in (tmp_path / "cover.svg").read_text()


def test_limits_on_deterministic_gasket(tmp_path):
    cfg = small("gasket-recursive", tasks=["rk", "limits"],
                eps_grid={"min": 2.0**-6, "max": 2.0**-4, "per_octave": 8},
                r_grid={"min_over_R": 1 / 256, "max_over_R": 1.0, "per_octave": 8})
    cfg["limits"].update(k=[2], delta=2.0**-6, n_values=[5, 6])
    m = run(cfg, out=tmp_path)
    assert list(m["tasks"]) == ["mean_curve", "rk", "limits"]
    methods = {r["method"] for r in read_csv(tmp_path / "limits.csv")}
    assert methods == {"renewal", "average", "lattice"}
    verdict = m["checks"]["positivity_and_ratio"]
    assert verdict["positive"] and verdict["ratio_target"] == pytest.approx(2 / (2 - math.log2(3)))
    for name in ("mean_curve.csv", "mean_curve.png", "rk_curve.csv", "rk_curve.png", "limits.png"):
        assert (tmp_path / name).exists()


def test_failed_task_leaves_partial_manifest(tmp_path):
    cfg = small("gasket-recursive", tasks=["dimension", "mean_curve"], max_side=256)
    with pytest.raises(RunError, match="mean_curve"):
        run(cfg, out=tmp_path)
    saved = json.loads((tmp_path / "manifest.json").read_text())
    assert not saved["complete"]
    assert saved["error"].startswith("mean_curve")
    assert "dimension" in saved["tasks"] and (tmp_path / "spectrum.csv").exists()


def test_run_rejects_invalid_config(tmp_path):
    with pytest.raises(ConfigError, match="q out of range"):
        run(small("gasket-recursive", q=1.0), out=tmp_path)


# -- command line --------------------------------------------------------------------------------

def write_config(path, cfg):
    path.write_text(yaml.safe_dump(json.loads(json.dumps(cfg))))
    return str(path)


def test_cli_validate(tmp_path, capsys):
    assert main(["validate", "preset:carpet-markov"]) == EXIT_OK
    assert "ok" in capsys.readouterr().out
    bad = write_config(tmp_path / "bad.yaml", small("carpet-markov", h_ratio=1.0))
    assert main(["validate", bad]) == EXIT_INVALID
    assert "h_ratio out of range" in capsys.readouterr().out


def test_cli_run_exit_codes(tmp_path, capsys):
    good = write_config(tmp_path / "good.yaml", small("gasket-recursive", tasks=["dimension"]))
    assert main(["run", good, "--out", str(tmp_path / "ok")]) == EXIT_OK
    assert "D = 1.58496" in capsys.readouterr().out
    bad = write_config(tmp_path / "bad.yaml", small("gasket-recursive", q=0.0))
    assert main(["run", bad, "--out", str(tmp_path / "bad")]) == EXIT_INVALID
    failing = write_config(tmp_path / "fail.yaml", small("gasket-recursive", tasks=["mean_curve"], max_side=256))
    assert main(["run", failing, "--out", str(tmp_path / "fail")]) == EXIT_RUNTIME
    assert "partial manifest" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.yaml")]) == EXIT_INVALID
    assert main(["run", "preset:nope"]) == EXIT_INVALID


def test_cli_output_directory_from_environment(tmp_path, monkeypatch):
    cfg = write_config(tmp_path / "c.yaml", small("gasket-recursive", tasks=["dimension"]))
    monkeypatch.setenv("FRACURV_OUT", str(tmp_path / "env"))
    assert main(["run", cfg]) == EXIT_OK
    assert (tmp_path / "env" / "spectrum.csv").exists()
    assert main(["run", cfg, "--out", str(tmp_path / "flag")]) == EXIT_OK
    assert (tmp_path / "flag" / "spectrum.csv").exists()


def test_cli_preset_emit_round_trips(capsys):
    assert main(["preset"]) == EXIT_OK
    assert capsys.readouterr().out.split() == list(PRESET_NAMES)
    assert main(["preset", "pinned-n2", "--emit"]) == EXIT_OK
    emitted = yaml.safe_load(capsys.readouterr().out)
    assert canonical_text(emitted) == canonical_text(preset("pinned-n2"))
