"""Command-line entry: two-stage training from two JSONL files."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, preset
from .data import DataError, load_records
from .trainer import EmptyDataset, MixedStages, OutOfMemory, two_stage

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medlogic-finetune",
        description="Two-stage LoRA fine-tuning on prompt-record JSONL files.",
    )
    parser.add_argument("--lu", required=True, type=Path, help="stage-1 records (JSONL)")
    parser.add_argument("--aqa", required=True, type=Path, help="stage-2 records (JSONL)")
    parser.add_argument("--out", required=True, type=Path, help="output directory")
    parser.add_argument("--preset", default="default", help="config preset name")
    parser.add_argument("--base-model", dest="base_model_id", default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--batch", dest="per_device_batch", type=int, default=None)
    parser.add_argument(
        "--skip-stage1",
        action="store_true",
        help="train stage 2 directly from the random base (single-stage baseline)",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    overrides = {
        name: getattr(args, name)
        for name in ("base_model_id", "epochs", "lr", "seed", "per_device_batch")
        if getattr(args, name) is not None
    }
    try:
        config = preset(args.preset, **overrides)
        lu = load_records(args.lu)
        aqa = load_records(args.aqa)
        stage1, stage2 = two_stage(
            lu, aqa, config, args.out, skip_stage1=args.skip_stage1
        )
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (EmptyDataset, MixedStages, OutOfMemory) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for name, run in (("stage1", stage1), ("stage2", stage2)):
        if run is None:
            print(f"{name}: skipped")
            continue
        print(
            f"{name}: {len(run.records)} records, loss "
            f"{run.initial_loss:.4f} -> {run.final_loss:.4f}, "
            f"checkpoint {run.checkpoint_ref}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
