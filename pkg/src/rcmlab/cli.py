"""Command-line entry point: ``rcmlab <experiment> [flags]``."""
import argparse
import json
import sys

from .errors import ConfigurationError
from .experiments import EXPERIMENTS, ExperimentConfig, run

# flag name -> config field
_FLAGS = {
    "dim": "d", "gamma": "gamma", "n": "n_grid", "seeds": "seeds", "seed_base": "seed_base",
    "xi": "xi", "p": "p", "epsilon": "epsilon", "epsilon1": "epsilon1", "delta": "delta",
    "tol": "tol", "threads": "threads", "out": "out", "law": "law", "c": "c", "k": "k",
    "solver": "solver", "nu_level": "nu_level",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigurationError(message)


def build_parser():
    ap = _Parser(prog="rcmlab", description="Monte Carlo studies of the random conductance model.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--dim", type=int)
    ap.add_argument("--gamma", type=float)
    ap.add_argument("--n", type=int, action="append", help="box radius (repeatable)")
    ap.add_argument("--seeds", type=int)
    ap.add_argument("--seed-base", dest="seed_base", type=int)
    ap.add_argument("--xi", type=float)
    ap.add_argument("--p", type=float)
    ap.add_argument("--epsilon", type=float)
    ap.add_argument("--epsilon1", type=float)
    ap.add_argument("--delta", type=float)
    ap.add_argument("--tol", type=float)
    ap.add_argument("--threads", type=int)
    ap.add_argument("--out")
    ap.add_argument("--config", help="JSON file with the same keys as the flags")
    ap.add_argument("--law", choices=("polynomial", "constant"))
    ap.add_argument("--c", type=float, help="weight of the constant law")
    ap.add_argument("--k", type=int)
    ap.add_argument("--solver", choices=("direct", "pcg"))
    ap.add_argument("--nu-level", dest="nu_level", type=float)
    return ap


def _load_config(path):
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigurationError("config file must hold a JSON object")
    out = {}
    for key, val in data.items():
        key = key.replace("-", "_")
        if key in ("experiment", "config"):
            continue
        if key not in _FLAGS:
            raise ConfigurationError(f"unknown config key {key!r}")
        out[_FLAGS[key]] = val
    if "n_grid" in out and not isinstance(out["n_grid"], list):
        out["n_grid"] = [out["n_grid"]]
    return out


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        fields = {}
        if args.config:
            try:
                fields.update(_load_config(args.config))
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"malformed config file: {e}") from None
        for flag, name in _FLAGS.items():
            val = getattr(args, flag)
            if val is not None:
                fields[name] = val
        cfg = ExperimentConfig(args.experiment, **fields).validate()
    except ConfigurationError as e:
        print(f"rcmlab: configuration error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"rcmlab: I/O error: {e}", file=sys.stderr)
        return 3
    try:
        result = run(cfg)
    except ConfigurationError as e:
        print(f"rcmlab: configuration error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"rcmlab: I/O error: {e}", file=sys.stderr)
        return 3
    ok = sum(r["status"] == "ok" for r in result.rows)
    print(f"{len(result.rows)} runs ({ok} ok) written to {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
