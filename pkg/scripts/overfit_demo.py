#!/usr/bin/env python3
"""Memorization sanity run: synthesize a separable dataset, train until the
model pins its training split, then evaluate and report.

Usage: python3 scripts/overfit_demo.py [--workdir runs/overfit] [--seed 7]
"""
import argparse
import os
import sys

from emofuse import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/overfit")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()

    data_dir = os.path.join(args.workdir, "data")
    run_dir = os.path.join(args.workdir, "train")
    eval_dir = os.path.join(args.workdir, "eval")

    steps = [
        ["synth", "--out", data_dir, "--seed", str(args.seed),
         "--classes", "6", "--conversations", "60", "--spread", "0.05"],
        ["train", "--data", os.path.join(data_dir, "manifest.json"),
         "--out", run_dir, "--d", "32", "--lr", "1e-3", "--dropout", "0.1",
         "--epochs", str(args.epochs), "--target-train-acc", "0.99"],
        ["eval", "--data", os.path.join(data_dir, "manifest.json"),
         "--checkpoint", os.path.join(run_dir, "checkpoint"),
         "--out", eval_dir, "--split", "train"],
    ]
    for argv in steps:
        code = cli.main(argv)
        if code != 0:
            return code
    print(f"reports under {eval_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
