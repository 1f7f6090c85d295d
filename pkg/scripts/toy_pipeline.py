#!/usr/bin/env python3
"""Run the whole pipeline on a small synthetic dataset.

Generates a toy dataset, writes corrupted pseudo-labels, trains a compact
student, predicts on the held-out split, scores it, and self-compares.
Everything lands under --output; pass --epochs 0 to stop after pseudo-labels.
"""

import argparse
import json
import sys
from pathlib import Path

from kdseg.cli import main as kdseg


def run(args) -> int:
    out = Path(args.output)
    settings = [
        "--set", f"synth.count={args.count}",
        "--set", f"synth.size={args.size}",
        "--set", "synth.fractions=[0.7, 0.1, 0.2]",
        "--set", f"teacher.drop_fraction={args.drop_fraction}",
        "--set", f"model.depth={args.depth}",
        "--set", f"model.base_channels={args.base_channels}",
        "--set", f"train.epochs={args.epochs}",
        "--set", "train.steps_per_epoch=null",
    ]
    common = ["--output", str(out), "--seed", str(args.seed), *settings]

    for command in ("synth", "pseudolabel"):
        code = kdseg([command, *common])
        if code != 0:
            return code
    if args.epochs == 0:
        return 0
    for command in ("train", "predict", "evaluate"):
        code = kdseg([command, *common])
        if code != 0:
            return code
    pred = out / "predictions"
    code = kdseg(["compare", *common, f"student={pred}", f"student_again={pred}"])
    if code != 0:
        return code

    summary = json.loads((out / "metrics_summary.json").read_text())
    print("\nheld-out means:")
    for metric, agg in summary.items():
        print(f"  {metric}: {agg['mean']:.4f} +/- {agg['std']:.4f} (n={int(agg['n'])})")
    return 0


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--output", default="runs/toy", help="output directory")
    parser.add_argument("--count", type=int, default=80)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--drop-fraction", type=float, default=0.3)
    parser.add_argument("--depth", type=int, default=2)
    parser.add_argument("--base-channels", type=int, default=8)
    parser.add_argument("--epochs", type=int, default=15)
    parser.add_argument("--seed", type=int, default=0)
    return parser.parse_args(argv)


if __name__ == "__main__":
    sys.exit(run(parse_args()))
