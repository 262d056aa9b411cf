"""Command-line entry point: one subcommand per named experiment.

Flags mirror the experiment configuration fields in kebab-case; a JSON
file passed through --config overrides any flag. Exit code 0 means every
pass flag in the report came out true; 1 is a failed or crashed run and
2 a configuration rejected by the schema.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (
    _SCHEMAS,
    EXPERIMENT_NAMES,
    ConfigError,
    ExperimentConfig,
    run,
)

_HELP = {
    "field-sample": "evaluate the centered field on a grid and render heatmaps",
    "max-scan": "growth of the field maximum across dimensions",
    "thick-points": "area decay of high-level sets",
    "freezing": "free-energy curve against its limiting prediction",
    "covariance": "two-point covariance against the log-distance prediction",
    "clt": "variance of the mesoscopic linear statistic",
    "gmc": "stability of the normalized chaos mass across dimensions",
    "moments-check": "exact moment formulas against Monte Carlo and the Heine route",
    "ww-scan": "moment-to-prediction ratio scan along dimensions",
    "kostlan-tail": "spectral-radius tail against the exponential bound",
    "ward": "Monte Carlo residual of the integration-by-parts identity",
    "kernel-gap": "perturbed-kernel identities and Bergman gap constants",
}

_INT_FLAGS = ("replicas", "grid_resolution")
_FLOAT_FLAGS = ("grid_half_side", "r", "beta", "gamma", "alpha", "eps",
                "eps0", "delta", "t")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_arguments(sub: argparse.ArgumentParser, name: str) -> None:
    schema = _SCHEMAS[name]
    if "n_list" in schema:
        sub.add_argument("--n", type=int, metavar="N",
                         help="single dimension (shorthand for --n-list N)")
        sub.add_argument("--n-list", type=str, metavar="N1,N2,...",
                         help="comma-separated dimensions")
    for field in _INT_FLAGS:
        if field in schema:
            sub.add_argument(_flag(field), type=int,
                             help=f"default {schema[field].default}")
    for field in _FLOAT_FLAGS:
        if field in schema:
            sub.add_argument(_flag(field), type=float,
                             help=f"default {schema[field].default:g}")
    if "beta_list" in schema:
        default = ",".join(f"{b:g}" for b in schema["beta_list"].default)
        sub.add_argument("--beta-list", type=str, metavar="B1,B2,...",
                         help=f"default {default}")
    if "backend" in schema:
        sub.add_argument("--backend", choices=("matrix-eig", "dpp-kernel"),
                         help="default matrix-eig")
    sub.add_argument("--seed", type=int, help="default 42")
    sub.add_argument("--threads", type=int,
                     help="worker count; default GINFIELD_THREADS or 1")
    sub.add_argument("--out", type=str, metavar="DIR",
                     help="output directory; default .")
    sub.add_argument("--config", type=str, metavar="FILE.json",
                     help="JSON config; its entries override the flags")


def _parse_list(text: str, cast, flag: str):
    try:
        return tuple(cast(part) for part in text.split(",") if part != "")
    except ValueError:
        raise SystemExit(f"ginfield: {flag} expects comma-separated values, got {text!r}")


def _config_dict(args: argparse.Namespace) -> dict:
    name = args.experiment
    d: dict = {"name": name}
    schema = _SCHEMAS[name]
    if "n_list" in schema:
        if args.n is not None and args.n_list is not None:
            raise SystemExit("ginfield: pass --n or --n-list, not both")
        if args.n is not None:
            d["n_list"] = (args.n,)
        elif args.n_list is not None:
            d["n_list"] = _parse_list(args.n_list, int, "--n-list")
    for field in _INT_FLAGS + _FLOAT_FLAGS + ("backend",):
        if field in schema:
            value = getattr(args, field)
            if value is not None:
                d[field] = value
    if "beta_list" in schema and args.beta_list is not None:
        d["beta_list"] = _parse_list(args.beta_list, float, "--beta-list")
    if args.seed is not None:
        d["seed"] = args.seed
    if args.threads is not None:
        d["threads"] = args.threads
    if args.out is not None:
        d["out_dir"] = args.out
    if args.config is not None:
        try:
            overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SystemExit(f"ginfield: cannot read {args.config}: {exc}")
        if not isinstance(overrides, dict):
            raise SystemExit(f"ginfield: {args.config} must hold a JSON object")
        if overrides.get("name", name) != name:
            raise SystemExit(
                f"ginfield: config file names experiment "
                f"{overrides['name']!r}, subcommand is {name!r}")
        d.update(overrides)
        d["name"] = name
    return d


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ginfield",
        description="Seeded, reproducible checks of the Ginibre log-modulus "
                    "field and its exact finite-N formulas.",
    )
    subs = parser.add_subparsers(dest="experiment", required=True,
                                 metavar="EXPERIMENT")
    for name in EXPERIMENT_NAMES:
        sub = subs.add_parser(name, help=_HELP[name])
        _add_arguments(sub, name)
    args = parser.parse_args(argv)

    try:
        config = ExperimentConfig.from_dict(_config_dict(args))
    except ConfigError as exc:
        print(f"ginfield: {exc}", file=sys.stderr)
        return 2
    try:
        report = run(config)
    except ConfigError as exc:
        print(f"ginfield: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # report.json already written by run()
        print(f"ginfield: {args.experiment} failed: {exc}", file=sys.stderr)
        return 1

    verdict = "PASS" if report.passed else "FAIL"
    wall = f"{report.wall_clock_s:.1f}" if report.wall_clock_s is not None else "?"
    print(f"{report.name}: {verdict} ({wall} s)")
    for key in sorted(report.passes):
        mark = "pass" if report.passes[key] else "FAIL"
        print(f"  {mark}  {key}")
    for note in report.notes:
        print(f"  note: {note}")
    out = Path(config.out_dir if config.out_dir else ".")
    print(f"report: {out / 'report.json'}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
