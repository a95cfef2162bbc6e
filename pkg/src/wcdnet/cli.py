"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 runtime failure. Diagnostics go to stderr; results go to files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from .config import OUT_ENV, ConfigError, load_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config file (YAML)")
    p.add_argument("--seed", type=int, help="random seed (overrides config and WCDNET_SEED)")


def _out(p: argparse.ArgumentParser, help_text: str, default: str = "$WCDNET_OUT") -> None:
    p.add_argument("--out", help=f"{help_text} (default: {default})")


def build_parser() -> Parser:
    parser = Parser(prog="wcdnet", description="Weakly supervised change detection.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=Parser)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--spec", help="synthetic dataset spec (YAML mapping of SyntheticSpec fields)")
    p.add_argument("--num-pairs", type=int, help="override the number of pairs")
    _out(p, "output dataset directory")

    p = sub.add_parser("adapt-aicd", help="patch an AICD-style tree into a dataset")
    _common(p)
    p.add_argument("--root", required=True, help="AICD root directory")
    p.add_argument("--labels", required=True, help="CSV of 'stem,label' image-level labels")
    p.add_argument("--image-dir", default="Images_Shadows")
    p.add_argument("--mask-dir", default="GroundTruth")
    p.add_argument("--patch", type=int, default=122, help="patch size in pixels")
    p.add_argument("--grid", type=int, nargs=2, default=(6, 8), metavar=("ROWS", "COLS"))
    p.add_argument("--resize", type=int, default=128, help="patch size after resizing")
    p.add_argument("--min-pixels", type=int, default=16, help="changed pixels needed to label a patch")
    _out(p, "output dataset directory")

    p = sub.add_parser("adapt-hrscd", help="tile an HRSCD-style tree into a dataset")
    _common(p)
    p.add_argument("--root", required=True, help="HRSCD root directory")
    p.add_argument("--crop", type=int, default=1000, help="tile size in pixels")
    p.add_argument("--resize", type=int, default=512, help="tile size after resizing")
    p.add_argument("--min-pixels", type=int, default=16, help="changed pixels needed to label a tile")
    p.add_argument("--oversample", type=int, default=0, help="minimum entries per label")
    _out(p, "output dataset directory")

    p = sub.add_parser("train", help="stage 1: train without the CRF layer")
    _common(p)
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--val-data", help="validation dataset directory (default: hold-out split)")
    p.add_argument("--epochs", type=int, help="override max_epochs")
    p.add_argument("--no-residual", action="store_true", help="drop the residual block")
    p.add_argument("--resume", help="resume from a stage-1 'last' checkpoint")
    _out(p, "run directory")

    p = sub.add_parser("finetune", help="stage 2: insert the CRF layer and finetune")
    _common(p)
    p.add_argument("--ckpt", required=True, help="stage-1 checkpoint")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--val-data", help="validation dataset directory")
    p.add_argument("--epochs", type=int, help="override max_epochs")
    _out(p, "run directory")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    _common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--postprocess-crf", action="store_true", help="refine masks with the non-learned CRF")
    _out(p, "directory for metrics.json and metrics.csv")

    p = sub.add_parser("predict", help="predict label and change mask for one pair")
    _common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--prev", required=True, help="previous image")
    p.add_argument("--curr", required=True, help="current image")
    p.add_argument("--name", default="prediction", help="output file stem")
    _out(p, "output directory")

    p = sub.add_parser("report", help="metrics tables and figures for a run")
    _common(p)
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--data", help="dataset to evaluate (default: the run's dataset)")
    p.add_argument("--panels", type=int, default=8, help="number of pairs in the panel figure")
    p.add_argument("--postprocess-crf", action="store_true", help="also score CRF post-processing")
    _out(p, "report directory", "<run>/report")
    return parser


def _require_out(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        raise UsageError(f"wcdnet {args.command}: --out is required (or set {OUT_ENV})")
    return Path(out)


def _dispatch(args) -> None:
    from . import runs

    cfg = load_config(args.config, args.seed)
    cmd = args.command
    if cmd == "gen-data":
        from .data.manifest import write_synthetic
        from .data.synthetic import SyntheticSpec

        values = {}
        if args.spec:
            spec_path = Path(args.spec)
            if not spec_path.is_file():
                raise FileNotFoundError(f"spec file not found: {spec_path}")
            values = yaml.safe_load(spec_path.read_text(encoding="utf-8")) or {}
            if not isinstance(values, dict):
                raise ConfigError(f"{spec_path}: spec must be a mapping")
        try:
            spec = SyntheticSpec(**values)
        except TypeError as exc:
            raise ConfigError(f"invalid synthetic spec: {exc}") from exc
        if args.seed is not None:
            spec.seed = args.seed
        if args.num_pairs is not None:
            spec.num_pairs = args.num_pairs
        write_synthetic(spec, _require_out(args))
    elif cmd == "adapt-aicd":
        from .data.adapters import adapt_aicd

        adapt_aicd(
            args.root,
            args.labels,
            _require_out(args),
            image_dir=args.image_dir,
            mask_dir=args.mask_dir,
            patch=args.patch,
            grid=tuple(args.grid),
            resize=args.resize,
            min_pixels=args.min_pixels,
        )
    elif cmd == "adapt-hrscd":
        from .data.adapters import adapt_hrscd

        adapt_hrscd(
            args.root,
            _require_out(args),
            crop=args.crop,
            resize=args.resize,
            min_pixels=args.min_pixels,
            oversample_min=args.oversample,
        )
    elif cmd == "train":
        if args.epochs is not None:
            cfg.train.max_epochs = args.epochs
        if args.no_residual:
            cfg.model.residual_block_enabled = False
        runs.run_train(args.data, _require_out(args), cfg.validate(), args.val_data, args.resume)
    elif cmd == "finetune":
        if args.epochs is not None:
            cfg.train.max_epochs = args.epochs
        from .model import load_checkpoint
        from .train import config_from_checkpoint

        if args.config is None:
            base = config_from_checkpoint(load_checkpoint(args.ckpt))
            base.train.seed = cfg.train.seed
            base.train.max_epochs = cfg.train.max_epochs if args.epochs is not None else base.train.max_epochs
            cfg = base
        cfg.model.crf_enabled = False
        runs.run_finetune(args.ckpt, args.data, _require_out(args), cfg.validate(), args.val_data)
    elif cmd == "eval":
        out = args.out or os.environ.get(OUT_ENV)
        rep = runs.run_eval(args.ckpt, args.data, out, args.postprocess_crf, cfg.crf)
        logging.getLogger("wcdnet").info("metrics: %s", json.dumps(rep.to_dict()))
    elif cmd == "predict":
        from .data.manifest import read_rgb
        from .train import predict

        predict(args.ckpt, read_rgb(args.prev), read_rgb(args.curr), _require_out(args), args.name)
    elif cmd == "report":
        runs.run_report(args.run, args.data, args.out, args.panels, args.postprocess_crf)


def run(argv: list[str] | None = None) -> int:
    from .data.manifest import DatasetError
    from .model.checkpoint import CheckpointError
    from .train import DatasetContractError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip() + "\nwcdnet: error: a command is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _dispatch(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DatasetError, DatasetContractError, ConfigError, CheckpointError) as exc:
        print(f"wcdnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:
        print(f"wcdnet {args.command}: runtime failure: {exc!r}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
