"""
### trainflow command line.
    trainflow <subcommand> --config <path> [--out DIR] [--seed N] [--svg] [--png] [-v]

Subcommands: spectrum, convergence, noise-bias, remedies, rollout.
Exit codes: 0 success, 2 bad configuration or input, 3 numerical failure.
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

import bench
from matcore import ConfigError, NumericalError, TrainflowError

logger = logging.getLogger("trainflow")

SUBCOMMANDS = ("spectrum", "convergence", "noise-bias", "remedies", "rollout")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3



def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trainflow",
        description="Training-instability experiments for learned linear dynamics.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="base seed (overrides base_seed)")
        p.add_argument("--svg", action="store_true", help="also write SVG pictures")
        p.add_argument("--png", action="store_true", help="also write PNG heatmaps")
        p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    return parser
# build_parser



def _overrides(args: argparse.Namespace) -> dict:
    out = {}
    if args.out is not None:
        out["output_dir"] = args.out
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {args.seed}")
        out["base_seed"] = args.seed
    if args.svg:
        out["emit_svg"] = True
    if args.png:
        out["emit_png"] = True
    return out
# _overrides



def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = bench.load_config(args.config, experiment=args.command,
                                   overrides=_overrides(args))
        artifacts = bench.run_experiment(config)
    except NumericalError as e:
        logger.error("numerical failure: %s", e)
        return EXIT_NUMERICAL
    except TrainflowError as e:
        # ConfigError, SpecError, DimensionError, InputDomainError, DegenerateDataError
        logger.error("%s", e)
        return EXIT_CONFIG
    except OSError as e:
        logger.error("cannot write results: %s", e)
        return EXIT_CONFIG

    paths = [str(p) for p in artifacts.csv_paths + artifacts.picture_paths]
    print(f"{config.experiment}: {artifacts.metadata_path} " + " ".join(paths))
    return EXIT_OK
# main



if __name__ == "__main__":
    sys.exit(main())
