"""Command-line entry point: ``python -m dopplerfisher <experiment> [options]``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, DopplerFisherError
from .experiments import AXIS_KEYS, EXPERIMENTS, OPTION_KEYS, ExperimentSpec, run
from .model import load_config

_DESCRIPTIONS = {
    "fig1": "Rabi oscillation, fidelity and Delta F_Q against time",
    "fig2": "long-time Delta F_Q slope against delta0 for each n",
    "fig3": "rotation-angle scans of the Doppler CFI",
    "fig4": "optimized and unrotated CFI/QFI against n for several sigma_p",
    "rabi": "population of state a against time",
    "fidelity": "final-state fidelity against time",
    "qfi": "Ideal and Doppler QFI with the J integrals",
    "cfi": "CFI without rotation and at the optimal (or given) angle",
    "sweep": "one quantity over a Cartesian product of axes",
}


def parse_assignment(text: str) -> tuple[str, object]:
    """``key=value`` with a JSON value; bare words fall back to strings."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dopplerfisher", description=__doc__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=_DESCRIPTIONS[name])
        p.add_argument("--config", help="JSON file of settings")
        p.add_argument("--out", default=f"out/{name}", help="output directory (default: %(default)s)")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: $DOPPLERFISHER_WORKERS, else 1)")
        p.add_argument("--plot", action="store_true", help="also write SVG figures")
        p.add_argument("--set", dest="assignments", action="append", default=[], metavar="KEY=VALUE",
                       help="override one setting; repeatable; VALUE is parsed as JSON")
        if name == "sweep":
            p.add_argument("--axis", dest="axis_specs", action="append", default=[], metavar="NAME=[...]",
                           help=f"sweep axis, one of {', '.join(AXIS_KEYS)}; repeatable")
    return parser


def spec_from_args(args) -> ExperimentSpec:
    settings = load_config(args.config, extra_keys=OPTION_KEYS) if args.config else {}
    for text in args.assignments:
        key, value = parse_assignment(text)
        settings[key] = value
    axes = dict(settings.pop("axes", {}) or {})
    for text in getattr(args, "axis_specs", []):
        key, value = parse_assignment(text)
        axes[key] = value if isinstance(value, list) else [value]
    return ExperimentSpec(args.experiment, settings=settings, axes=axes, out=args.out, plot=args.plot,
                          workers=args.workers)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = run(spec_from_args(args))
    except DopplerFisherError as exc:
        print(json.dumps(exc.to_dict(), default=str), file=sys.stderr)
        return 2
    for path in result.files:
        print(path)
    return 0
