"""relu-lab command line interface."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from relu_lab.harness.config import ExperimentConfig, ExperimentKind, load_config
from relu_lab.harness.experiments import run_experiment
from relu_lab.harness.io import dumps, save_output
from relu_lab.model import ValidationError

log = logging.getLogger("relu_lab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relu-lab",
                                     description="GLM-tron vs SGD for ReLU regression")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in ExperimentKind:
        p = sub.add_parser(kind.value)
        p.add_argument("--config", type=Path, required=True, help="TOML experiment config")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="base seed (u64)")
        p.add_argument("--threads", type=int, default=None)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg: ExperimentConfig = load_config(args.config, args.command)
        cfg = cfg.with_overrides(output_dir=args.out, base_seed=args.seed, threads=args.threads)
        out = run_experiment(cfg)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"relu-lab: error: {exc}", file=sys.stderr)
        return 2
    if cfg.experiment is ExperimentKind.BOUNDS:
        print(dumps(out.summary))
        return 0
    written = save_output(out, cfg.output_dir, cfg.experiment.value)
    for name, path in written.items():
        log.info("wrote %s -> %s", name, path)
    print(dumps(out.summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
