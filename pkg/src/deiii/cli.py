"""Command line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .autodiff import NonFiniteError
from .commands import DIRECTIONS, cmd_ablate, cmd_eval, cmd_heatmap, cmd_synth, cmd_train
from .config import ConfigError, RunConfig
from .data.dataset import DataError
from .data.features import FeatureFileError
from .model import HEADS, VARIANTS
from .training import NumericFailure


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
        if cfg.data.synth is not None:
            cfg.data.synth = {**cfg.data.synth, "seed": args.seed}
    if args.precision:
        cfg.train.precision = args.precision
    if args.out:
        cfg.output = args.out
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON")
    common.add_argument("--seed", type=int, help="override train (and synth) seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--precision", choices=("f32", "f64"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="deiii", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    sub.add_parser("train", parents=[common], help="train one model")

    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.add_argument("--head", choices=HEADS)
    ev.add_argument("--data", help="dataset root (defaults to the one recorded at training)")

    ab = sub.add_parser("ablate", parents=[common], help="train and compare variants")
    ab.add_argument("--variant", required=True,
                    help=f"comma-separated variants from: {', '.join(VARIANTS)}")

    hm = sub.add_parser("heatmap", parents=[common], help="export an attention heatmap")
    hm.add_argument("--checkpoint", required=True)
    hm.add_argument("--sample", required=True)
    hm.add_argument("--direction", required=True, choices=sorted(DIRECTIONS))
    hm.add_argument("--data", help="dataset root (defaults to the one recorded at training)")
    return p


def run(args) -> int:
    if args.command == "synth":
        cfg = _load_config(args)
        root = cmd_synth(cfg, out=args.out, force=args.force)
        print(root)
    elif args.command == "train":
        cfg = _load_config(args)
        print(json.dumps(cmd_train(cfg, force=args.force), indent=2))
    elif args.command == "eval":
        cfg = RunConfig.load(args.config) if args.config else None
        report = cmd_eval(args.checkpoint, args.split, args.head, cfg=cfg, out=args.out, data_root=args.data)
        print(json.dumps(report, indent=2))
    elif args.command == "ablate":
        cfg = _load_config(args)
        variants = [v.strip() for v in args.variant.split(",") if v.strip()]
        bad = [v for v in variants if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown variants {bad}")
        print(json.dumps(cmd_ablate(cfg, variants, force=args.force), indent=2))
    elif args.command == "heatmap":
        cfg = RunConfig.load(args.config) if args.config else None
        paths = cmd_heatmap(args.checkpoint, args.sample, args.direction, args.out or ".", cfg=cfg,
                            data_root=args.data)
        for path in paths:
            print(path)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FeatureFileError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericFailure, NonFiniteError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
