"""Command-line entry point.

    kanspoof gen-data  --config CFG --out DIR
    kanspoof train     --config CFG --out DIR
    kanspoof eval      --config CFG --checkpoint CK --split eval --out DIR
    kanspoof gradcheck [--config CFG] [--out DIR]
    kanspoof ablate    --config CFG --out DIR

Exit codes: 0 success, 1 invalid configuration, 2 runtime or file-format
error, 3 gradient check failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ExperimentConfig
from .gradsuite import UNIT_NAMES, run_gradcheck
from .numerics import ConfigurationError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kanspoof", description="Kanformer spoof detection on feature sequences.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, out_required=True):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment config (JSON); defaults apply when omitted")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
        return p

    add("gen-data", "write synthetic feature files and split manifests")
    add("train", "train a model, write checkpoints and report.json")
    p = add("eval", "score a split with a checkpoint")
    p.add_argument("--checkpoint", required=True, help="KFCK checkpoint file")
    p.add_argument("--split", choices=pipeline.ROLES, default="eval")
    p = add("gradcheck", "finite-difference check of every unit", out_required=False)
    p.add_argument("--corrupt-unit", choices=UNIT_NAMES, help=argparse.SUPPRESS)
    add("ablate", "train the full model and the three single-component ablations")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg.validate()


def _gradcheck(args, cfg: ExperimentConfig) -> int:
    print(f"{'unit':<18} {'max rel err':>10} {'coords':>7} {'time':>8}  result")
    results = run_gradcheck(cfg.seed, corrupt=args.corrupt_unit, log=print)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        pipeline.write_json(Path(args.out) / "gradcheck.json", [r.to_dict() for r in results])
    failed = [r.unit for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} units pass")
    return EXIT_GRADCHECK if failed else EXIT_OK


def run(args) -> int:
    cfg = load_config(args)
    if args.command == "gen-data":
        res = pipeline.gen_data(cfg, args.out)
        print(f"wrote {res['n_files']} feature files to {res['out']}: {res['counts']}")
    elif args.command == "train":
        res = pipeline.train(cfg, args.out)
        best = res["best"]
        print(
            f"stopped at epoch {res['stopped_epoch']} ({res['stop_reason']}); best epoch {res['best_epoch']}: "
            f"dev EER {best.get('dev_eer', float('nan')):.4f}, eval EER {best.get('eval_eer', float('nan')):.4f}"
        )
    elif args.command == "eval":
        res = pipeline.evaluate(cfg, args.checkpoint, args.split, args.out)
        print(f"{args.split}: EER {res['eer']:.4f}  min t-DCF {res['min_tdcf']:.4f}  "
              f"({res['n_bonafide']} bonafide, {res['n_spoof']} spoof)")
    elif args.command == "gradcheck":
        return _gradcheck(args, cfg)
    elif args.command == "ablate":
        res = pipeline.ablate(cfg, args.out)
        for v in res["variants"]:
            print(f"{v['name']:<20} dev EER {v['dev_eer']:.4f}  eval EER {v['eval_eer']:.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return run(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
