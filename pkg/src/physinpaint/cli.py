"""Command-line entry point: ``physinpaint <command> [options]``.

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import load_config, preset
from .errors import ConfigError, NumericalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _config(args):
    cfg = load_config(args.config) if args.config else preset(args.scale)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _need(args, name: str):
    value = getattr(args, name)
    if value is None:
        raise ConfigError(f"--{name} is required for {args.command}")
    if not Path(value).exists():
        raise ConfigError(f"--{name} {value} does not exist")
    return value


def _run(args) -> object:
    cfg = _config(args)
    out = Path(args.out)
    if args.command == "gen-data":
        path = out if out.suffix else out / "dataset.gifs"
        return str(pipeline.cmd_gen_data(cfg, path))
    if args.command == "train":
        resume = _need(args, "checkpoint") if args.checkpoint else None
        return str(pipeline.cmd_train(cfg, _need(args, "dataset"), out, resume=resume))
    if args.command == "eval-uncond":
        return pipeline.cmd_eval_uncond(cfg, _need(args, "checkpoint"), out, n=args.n, dataset_path=args.dataset)
    if args.command == "inpaint":
        return pipeline.cmd_inpaint(cfg, _need(args, "checkpoint"), out)
    if args.command == "zdim-study":
        return pipeline.cmd_zdim_study(cfg, _need(args, "dataset"), out)
    if args.command == "solve":
        return pipeline.cmd_solve(cfg, out, seed=args.sample_seed)
    if args.command == "spectrum":
        return pipeline.cmd_spectrum(cfg, out, dataset_path=args.dataset)
    raise ConfigError(f"unknown command {args.command}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="physinpaint", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config (overrides --scale)")
    common.add_argument("--scale", choices=("toy", "paper"), default="toy", help="built-in preset")
    common.add_argument("--seed", type=int, help="override every base seed")
    common.add_argument("--out", default="out", help="output file or directory")
    common.add_argument("--checkpoint", help="model checkpoint (resume source for train)")
    common.add_argument("--dataset", help="GIFS dataset file")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="sample lnK fields and solve for h, F")
    sub.add_parser("train", parents=[common], help="train the physics-informed WGAN")
    p = sub.add_parser("eval-uncond", parents=[common], help="spectra and physical consistency of generated samples")
    p.add_argument("--n", type=int, help="number of generated samples")
    sub.add_parser("inpaint", parents=[common], help="reconstruct held-out fields from sparse measurements")
    sub.add_parser("zdim-study", parents=[common], help="train and inpaint for each latent size")
    p = sub.add_parser("solve", parents=[common], help="solve the flow problem for one KL draw")
    p.add_argument("--sample-seed", type=int, default=0)
    sub.add_parser("spectrum", parents=[common], help="KL energy table and dataset spectra")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = _run(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MemoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(result, indent=2, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
