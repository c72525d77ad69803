"""Command-line entry point.

Exit codes: 0 success, 2 configuration or input error, 3 infeasibility
(excitation or step size), 4 numerical failure.
"""

import argparse
import json
import os
import sys
from importlib import resources

import jsonschema
import numpy as np

from . import experiments
from .errors import (DimensionError, GainInfeasibleError, InfeasibleConstraintsError,
                     PersistencyError, SignalFormatError, StabilityError, StructuralError)

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

OUTPUT_FILES = {"montecarlo-g": "montecarlo_g.csv", "tracking": "tracking.csv",
                "rideshare": "rideshare.csv", "estimate": "estimate.json"}


class ConfigError(Exception):
    pass


def load_schema(name):
    text = resources.files("ddfeedback").joinpath("schemas", f"{name}.json").read_text()
    return json.loads(text)


def load_config(name, path, overrides):
    """Read, merge and validate a command's configuration."""
    cfg = {}
    if path:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    try:
        jsonschema.validate(cfg, load_schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid {name} config at {where}: {exc.message}") from None
    return cfg


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ddfeedback",
        description="Data-driven steady-state gains and online feedback optimization.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("estimate", "estimate the steady-state gain from signal CSV files"),
            ("simulate", "simulate a plant and write its signals"),
            ("montecarlo-g", "estimation accuracy versus system size"),
            ("tracking", "tracking error against its certified bound"),
            ("rideshare", "adaptive versus fixed ride pricing")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--out", default=".", help="output directory")
        if name == "estimate":
            p.add_argument("--u", help="input signal CSV")
            p.add_argument("--y", help="output signal CSV")
            p.add_argument("--w", help="disturbance signal CSV (exact method, audits)")
            p.add_argument("--method", choices=sorted(experiments.ESTIMATORS))
            p.add_argument("--nu", type=int, help="Hankel depth (observability index)")
            p.add_argument("--block", type=int, help="block row used for the estimate")
            p.add_argument("--state-dim", type=int, dest="state_dim",
                           help="state dimension, enables the excitation check")
    return parser


def _estimate(cfg, out_dir):
    missing = [k for k in ("u", "y", "method", "nu") if k not in cfg]
    if missing:
        raise ConfigError(f"estimate needs {', '.join(missing)}")
    est = experiments.run_estimate(cfg["u"], cfg["y"], cfg["method"], cfg["nu"],
                                   w_path=cfg.get("w"), block=cfg.get("block", 1),
                                   state_dim=cfg.get("state_dim"),
                                   out=os.path.join(out_dir, OUTPUT_FILES["estimate"]))
    for key, val in est.residuals.items():
        print(f"residual {key}: {val:.3e}")
    return est


def run(args):
    overrides = {"seed": args.seed, "trials": args.trials}
    if args.command == "estimate":
        overrides = {k: getattr(args, k) for k in ("u", "y", "w", "method", "nu", "block", "state_dim")}
    elif args.command == "simulate":
        overrides = {"seed": args.seed}
    cfg = load_config(args.command, args.config, overrides)
    os.makedirs(args.out, exist_ok=True)
    out = os.path.join(args.out, OUTPUT_FILES.get(args.command, ""))
    if args.command == "estimate":
        _estimate(cfg, args.out)
    elif args.command == "simulate":
        experiments.run_simulate(cfg, args.out)
    elif args.command == "montecarlo-g":
        rows = experiments.run_montecarlo_g(cfg, out)
        for r in rows:
            if r.skipped:
                print(f"n={r.n}: skipped {r.skipped} trial(s) without enough excitation")
    elif args.command == "tracking":
        experiments.run_tracking(cfg, out)
    elif args.command == "rideshare":
        experiments.run_rideshare(cfg, out)
    print(f"wrote results to {args.out}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except (ConfigError, SignalFormatError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PersistencyError as exc:
        print(f"error: insufficient excitation: {exc} (rank {exc.rank}, required {exc.required})",
              file=sys.stderr)
        return EXIT_INFEASIBLE
    except (GainInfeasibleError, InfeasibleConstraintsError) as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (np.linalg.LinAlgError, StabilityError, StructuralError, RuntimeError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
