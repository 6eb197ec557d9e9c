"""Command-line entry point: ``hamshadow <experiment> --config <path> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .config import EXPERIMENTS, load_config
from .errors import ChannelNotInvertibleError, ConfigError, DomainError, FitError, NumericalHealthError, SnapshotParseError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("hamshadow")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hamshadow",
        description="Classical shadow tomography with random GUE Hamiltonian evolution.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="<experiment>")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--seed", help="master seed in hex (overrides the config)")
        p.add_argument("--out", help="output directory (default: current directory)")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
        p.add_argument("--replay", help="reconstruct from a snapshot file instead of sampling")
        p.add_argument("--save-snapshots", action="store_true", default=None,
                       help="also write snapshots.ndjson")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    # imported lazily so `--help` stays fast
    from .experiments import run_experiment, write_outputs

    try:
        cfg = load_config(
            args.config,
            experiment=args.experiment,
            seed=args.seed,
            out=args.out,
            threads=args.threads,
            replay=args.replay,
            save_snapshots=args.save_snapshots,
        )
        start = time.perf_counter()
        result = run_experiment(cfg)
        paths = write_outputs(result, cfg)
        log.info("%s finished in %.1fs", cfg.experiment, time.perf_counter() - start)
    except (ConfigError, SnapshotParseError, ChannelNotInvertibleError, DomainError, FitError) as exc:
        print(f"hamshadow: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalHealthError as exc:
        print(f"hamshadow: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"hamshadow: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    json.dump(paths, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
