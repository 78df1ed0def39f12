"""Command-line entry point: ``jointaoa <stage> [--preset P] [--config F] ...``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import pipeline
from .classifier import TrainingError
from .config import PRESETS, load_config

OUT_ENV = "JOINTAOA_OUT"

_STAGES = {
    "generate": pipeline.generate_datasets,
    "framework": pipeline.build_framework,
    "train": pipeline.train_ensemble,
    "threshold": pipeline.run_threshold_stage,
    "evaluate": pipeline.evaluate,
    "report": pipeline.write_report,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML file with configuration keys")
    common.add_argument("--preset", choices=sorted(PRESETS), help="named parameter set")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="training processes")
    common.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./runs)")
    common.add_argument("-q", "--quiet", action="store_true")
    parser = argparse.ArgumentParser(prog="jointaoa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_STAGES) + ["run-all"]:
        cmd = sub.add_parser(name, parents=[common])
        if name == "generate":
            cmd.add_argument("--csv", action="store_true", help="also export feature CSVs per split")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    out = args.out or os.environ.get(OUT_ENV)
    try:
        config = load_config(args.config, args.preset, seed=args.seed, workers=args.workers, out=out)
        run = pipeline.Run(config)
        if args.command == "run-all":
            pipeline.run_all(config)
        else:
            _STAGES[args.command](config, run)
            if getattr(args, "csv", False):
                pipeline.export_csv(config, run)
    except TrainingError as exc:
        print(f"error: {exc} (classifier {exc.classifier})", file=sys.stderr)
        return 3
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command in ("report", "run-all"):
        print(run.path("report.txt").read_text(), end="")
    print(run.dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
