"""Command line entry point ``fracurv``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, dump_yaml, load_config, validate
from .presets import PRESET_NAMES, UnknownPresetError, preset
from .run import RunError, run

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("fracurv")


def _load(source: str) -> dict:
    """A config file path, or ``preset:<name>`` for a shipped preset."""
    if source.startswith("preset:"):
        return preset(source.split(":", 1)[1])
    return load_config(source)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracurv", description="Mean fractal curvatures of random self-similar sets.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute the tasks of a run configuration")
    r.add_argument("config", help="YAML/JSON config file, or preset:<name>")
    r.add_argument("--seed", type=int, default=None, help="override the configured seed")
    r.add_argument("--jobs", type=int, default=1, help="worker processes for Monte-Carlo replicates")
    r.add_argument("--out", default=None, help="output directory (default: $FRACURV_OUT or the config's outputs)")

    pr = sub.add_parser("preset", help="show a shipped preset")
    pr.add_argument("name", nargs="?", help=f"one of: {', '.join(PRESET_NAMES)}")
    pr.add_argument("--emit", action="store_true", help="print the full configuration as YAML")

    v = sub.add_parser("validate", help="list problems in a configuration")
    v.add_argument("config")
    return p


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    errors = validate({**cfg, **({"seed": args.seed} if args.seed is not None else {})})
    if errors:
        for e in errors:
            print(f"invalid: {e}", file=sys.stderr)
        return EXIT_INVALID
    out = args.out or os.environ.get("FRACURV_OUT") or cfg.get("outputs") or "fracurv-out"
    try:
        manifest = run(cfg, out=out, jobs=args.jobs, seed=args.seed)
    except RunError as exc:
        print(f"run failed: {exc} (partial manifest in {out})", file=sys.stderr)
        return EXIT_RUNTIME
    for w in manifest["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    sp = manifest["spectrum"]
    if sp:
        print(f"D = {sp['D']!r}  eta = {sp['eta']!r}  lattice_c = {sp['lattice_c']!r}")
    for task, info in manifest["tasks"].items():
        print(f"{task:12s} {info['seconds']:8.2f} s  {' '.join(info['outputs'])}")
    print(f"wrote {Path(out) / 'manifest.json'}")
    return EXIT_OK


def _cmd_preset(args) -> int:
    if args.name is None:
        print("\n".join(PRESET_NAMES))
        return EXIT_OK
    cfg = preset(args.name)
    if args.emit:
        sys.stdout.write(dump_yaml(cfg))
    else:
        print(f"{cfg['name']}: {cfg['description']}")
        print(f"  model kind {cfg['model']['kind']}, tasks {', '.join(cfg['tasks'])}")
        print(json.dumps({k: cfg[k] for k in ("eps_grid", "n_mc", "q", "h_ratio", "seed")}, sort_keys=True))
    return EXIT_OK


def _cmd_validate(args) -> int:
    errors = validate(_load(args.config))
    for e in errors:
        print(e)
    if not errors:
        print("ok")
    return EXIT_INVALID if errors else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return {"run": _cmd_run, "preset": _cmd_preset, "validate": _cmd_validate}[args.command](args)
    except (ConfigError, UnknownPresetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
