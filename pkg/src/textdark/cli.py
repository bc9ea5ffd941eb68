"""``toolkit <task> --config PATH [--seed N] [--out DIR]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

import torch

from .errors import ToolkitError
from .metrics import EvalReport
from .pipeline.commands import run
from .pipeline.config import ENV_PREFIX, TASKS, load_config, validate

log = logging.getLogger("textdark")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="toolkit",
        description="Text-aware low-light enhancement: training, inference, synthesis, evaluation.",
        epilog=f"Environment overrides: {ENV_PREFIX}SECTION__KEY=value (e.g. {ENV_PREFIX}TRAIN_ENHANCE__EPOCHS=10).")
    p.add_argument("task", choices=TASKS)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--profile", choices=("desk", "paper"), help="override the configured profile")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"task": args.task}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if args.profile is not None:
        overrides["profile"] = args.profile
    try:
        cfg = validate(load_config(args.config, overrides))
        torch.manual_seed(cfg.seed)
        result = run(cfg)
    except ToolkitError as exc:
        print(f"toolkit {args.task}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    if isinstance(result, EvalReport):
        print(result.table(), end="")
    elif result is not None:
        print(getattr(result, "checkpoint", result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
