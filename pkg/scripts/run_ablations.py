#!/usr/bin/env python3
"""Run the full component-removal grid on a synthetic dataset and print the
resulting significance table.

Usage: python3 scripts/run_ablations.py [--workdir runs/ablate] [--seeds 3]
"""
import argparse
import os
import sys

from emofuse import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/ablate")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--grid",
                    default="full,A1,A2,A3,B1,B2,B3,C1,C2,D1")
    args = ap.parse_args()

    data_dir = os.path.join(args.workdir, "data")
    out_dir = os.path.join(args.workdir, "grid")
    code = cli.main(["synth", "--out", data_dir, "--seed", "7",
                     "--classes", "6", "--conversations", "60"])
    if code != 0:
        return code
    code = cli.main(["ablate", "--data", os.path.join(data_dir, "manifest.json"),
                     "--out", out_dir, "--grid", args.grid,
                     "--seeds", str(args.seeds), "--epochs", str(args.epochs),
                     "--d", "32", "--lr", "1e-3", "--dropout", "0.1"])
    if code != 0:
        return code
    with open(os.path.join(out_dir, "ablation.csv"), encoding="utf-8") as f:
        print(f.read())
    return 0


if __name__ == "__main__":
    sys.exit(main())
