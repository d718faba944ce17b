"""Command line interface.

    afem run --problem lshape --mode uniform --max-ndof 65000
    afem run --config sweep.cfg

A config file holds ``key = value`` lines mirroring the flags (dashes or
underscores); explicit flags override file values. Exit codes: 0 success,
1 configuration error, 2 solver singularity (partial CSV written).
"""

import argparse
import sys

from .bench import ExperimentConfig, run_experiment
from .errors import AfemError, ConfigError

_CONFIG_KEYS = {
    "problem": str,
    "mode": str,
    "theta": float,
    "max_ndof": int,
    "gamma": float,
    "out": str,
    "mesh": str,
    "dump_systems": lambda s: s.lower() in ("1", "true", "yes", "on"),
}


def _parse_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, _, val = line.partition("=")
                key = key.strip().replace("-", "_")
                if key not in _CONFIG_KEYS:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _CONFIG_KEYS[key](val.strip())
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    return values


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="afem",
        description="Adaptive nonconforming/mixed FEM benchmark driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a convergence experiment")
    run.add_argument("--config", help="key = value file mirroring the flags")
    run.add_argument(
        "--problem", choices=["lshape", "crack", "eigen_sweep"], default=None
    )
    run.add_argument("--mode", choices=["uniform", "adaptive"], default=None)
    run.add_argument("--theta", type=float, default=None,
                     help="bulk marking fraction (default 0.5)")
    run.add_argument("--max-ndof", type=int, default=None,
                     help="stop once the mixed dof count exceeds this")
    run.add_argument("--gamma", type=float, default=None,
                     help="single reaction magnitude for eigen_sweep")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--mesh", default=None,
                     help="start from this mesh file instead of the built-in one")
    run.add_argument("--dump-systems", action="store_true", default=None,
                     help="write assembled systems as triplet text per level")
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        values = _parse_config_file(args.config) if args.config else {}
        for key in _CONFIG_KEYS:
            flag = getattr(args, key)
            if flag is not None:
                values[key] = flag
        if "problem" not in values:
            raise ConfigError("missing required option --problem")
        config = ExperimentConfig(
            problem=values["problem"],
            mode=values.get("mode", "uniform"),
            theta=values.get("theta", 0.5),
            max_ndof=values.get("max_ndof", 50000),
            gamma=values.get("gamma"),
            out=values.get("out", "."),
            mesh_path=values.get("mesh"),
            dump_systems=bool(values.get("dump_systems", False)),
        )
        result = run_experiment(config)
    except ConfigError as exc:
        print(f"afem: configuration error: {exc}", file=sys.stderr)
        return 1
    except AfemError as exc:
        print(f"afem: error: {exc}", file=sys.stderr)
        return 1
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
