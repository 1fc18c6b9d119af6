"""Experiment harness CLI: synth | train | eval | ablate.

Exit codes: 0 success, 2 argument/config errors, 3 data/IO errors,
4 numeric aborts. Every command writes a run manifest with the resolved
config and dataset fingerprint so runs can be reproduced from it alone.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time

import numpy as np

from . import data as dataio
from . import metrics as met
from . import train as tr
from .autodiff import NumericsError
from .model import ABLATIONS, ConfigError, ModelConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _write_manifest(out_dir, command, argv, config, fingerprint, seed, outputs, timings):
    payload = {
        "command": command,
        "argv": argv,
        "resolved_config": config.to_dict() if config is not None else None,
        "dataset_fingerprint": fingerprint,
        "seed": seed,
        "output_dir": os.path.abspath(out_dir),
        "outputs": sorted(outputs),
        "timings": timings,
    }
    path = os.path.join(out_dir, "run_manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
    return path


def _resolve_config(args, fs):
    """defaults < config file < command-line flags."""
    base = ModelConfig().to_dict()
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as f:
            base.update(json.load(f))
    flag_map = {
        "lr": "lr", "lr_min": "lr_min", "batch_size": "batch_size",
        "dropout": "dropout", "weight_decay": "weight_decay", "epochs": "epochs",
        "seed": "seed", "d": "d", "heads": "heads", "rounds": "fusion_rounds",
        "target_train_acc": "target_train_acc", "split_seed": "split_seed",
    }
    for flag, key in flag_map.items():
        val = getattr(args, flag, None)
        if val is not None:
            base[key] = val
    base["classes"] = fs.class_count
    base["dim_text"] = fs.dims["text"]
    base["dim_audio"] = fs.dims["audio"]
    base["dim_visual"] = fs.dims["visual"]
    config = ModelConfig.from_dict(base)
    if getattr(args, "ablation", None):
        config = config.with_ablation(args.ablation)
    return config


def cmd_synth(args, argv):
    if args.classes < 2:
        raise ConfigError(f"--classes must be >= 2, got {args.classes}")
    if args.min_utts < 1 or args.max_utts < args.min_utts:
        raise ConfigError("invalid utterance range")
    t0 = time.time()
    fs = dataio.synth_dataset(
        seed=args.seed, conversations=args.conversations,
        n_range=(args.min_utts, args.max_utts),
        dims=(args.dim_text, args.dim_audio, args.dim_visual),
        classes=args.classes, cluster_spread=args.spread)
    os.makedirs(args.out, exist_ok=True)
    manifest_path = dataio.save_featureset(fs, args.out)
    fp = dataio.fingerprint(manifest_path)
    outputs = [os.path.relpath(os.path.join(r, f), args.out)
               for r, _, files in os.walk(args.out) for f in files]
    _write_manifest(args.out, "synth", argv, None, fp, args.seed, outputs,
                    {"total_seconds": time.time() - t0})
    print(f"dataset: {manifest_path}")
    print(f"fingerprint: {fp}")
    return EXIT_OK


def cmd_train(args, argv):
    t0 = time.time()
    fs = dataio.load_featureset(args.data)
    fp = dataio.fingerprint(args.data)
    config = _resolve_config(args, fs)
    train_set, valid_set, _ = dataio.split(fs, config.split_ratios, config.split_seed)
    os.makedirs(args.out, exist_ok=True)

    log_path = os.path.join(args.out, "epoch_log.csv")
    ckpt_dir = os.path.join(args.out, "checkpoint")
    with open(log_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "lr", "train_loss", "train_acc", "train_wf1",
                         "valid_loss", "valid_acc", "valid_wf1"])

        def log_fn(row):
            writer.writerow([row.epoch, f"{row.lr:.8g}",
                             f"{row.train_loss:.10g}", f"{row.train_acc:.10g}",
                             f"{row.train_wf1:.10g}", f"{row.valid_loss:.10g}",
                             f"{row.valid_acc:.10g}", f"{row.valid_wf1:.10g}"])
            if not args.quiet:
                print(f"epoch {row.epoch}: train_loss={row.train_loss:.4f} "
                      f"train_acc={row.train_acc:.4f} valid_acc={row.valid_acc:.4f}")

        result = tr.train(train_set, valid_set, config, resume=args.resume,
                          log_fn=log_fn, checkpoint_dir=ckpt_dir)

    t1 = time.time()
    outputs = ["epoch_log.csv", "checkpoint/checkpoint.json"]
    _write_manifest(args.out, "train", argv, config, fp, config.seed, outputs,
                    {"total_seconds": t1 - t0, "epochs_run": result.epochs_run})
    print(f"trained {result.epochs_run} epochs; checkpoint at {ckpt_dir}")
    print(f"parameters: {result.model.parameter_count()}")
    return EXIT_OK


def cmd_eval(args, argv):
    t0 = time.time()
    fs = dataio.load_featureset(args.data)
    fp = dataio.fingerprint(args.data)
    state = tr.load_checkpoint(args.checkpoint)
    config = state["config"]
    if config.classes != fs.class_count:
        raise ConfigError(f"checkpoint trained with {config.classes} classes, "
                          f"dataset has {fs.class_count}")
    if (config.dim_text, config.dim_audio, config.dim_visual) != (
            fs.dims["text"], fs.dims["audio"], fs.dims["visual"]):
        raise ConfigError(f"checkpoint dims {(config.dim_text, config.dim_audio, config.dim_visual)} "
                          f"do not match dataset dims {fs.dims}")
    model, _ = tr.build_model(config)
    for name, p in model.parameters().items():
        p.data = state["params"][name].copy()

    if args.split == "all":
        eval_set = fs
    else:
        parts = dict(zip(("train", "valid", "test"),
                         dataio.split(fs, config.split_ratios, config.split_seed)))
        eval_set = parts[args.split]
    result = tr.evaluate(model, eval_set)
    report = result.report(config.classes, fs.class_names)
    os.makedirs(args.out, exist_ok=True)
    met.write_confusion_csv(os.path.join(args.out, "confusion.csv"), report)
    met.write_per_class_csv(os.path.join(args.out, "per_class.csv"), report)
    met.write_aggregates_json(os.path.join(args.out, "aggregates.json"), report,
                              extra={"split": args.split, "loss": result.loss})
    proj = met.project_2d(result.features)
    met.write_projection_csv(os.path.join(args.out, "projection.csv"),
                             proj.coords, result.y_true)
    outputs = ["confusion.csv", "per_class.csv", "aggregates.json", "projection.csv"]
    _write_manifest(args.out, "eval", argv, config, fp, config.seed, outputs,
                    {"total_seconds": time.time() - t0})
    print(f"{args.split}: acc={report.accuracy:.4f} wf1={report.weighted_f1:.4f}")
    return EXIT_OK


def cmd_ablate(args, argv):
    t0 = time.time()
    fs = dataio.load_featureset(args.data)
    fp = dataio.fingerprint(args.data)
    config = _resolve_config(args, fs)
    variants = [v.strip() for v in args.grid.split(",") if v.strip()]
    for v in variants:
        if v != "full" and v not in ABLATIONS:
            raise ConfigError(f"unknown grid entry {v!r}")
    seeds = tuple(range(args.base_seed, args.base_seed + args.seeds))
    rows = tr.run_ablation_grid(fs, config, variants=variants, seeds=seeds,
                                eval_split=args.eval_split,
                                log_fn=None if args.quiet else print)
    os.makedirs(args.out, exist_ok=True)
    table_path = os.path.join(args.out, "ablation.csv")
    with open(table_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["variant", "wf1", "acc", "wf1_delta", "acc_delta",
                    "p_value", "param_count"])
        for row in rows:
            p_str = "n/a" if np.isnan(row.p_value) else f"{row.p_value:.6g}"
            w.writerow([row.variant, f"{row.wf1_mean:.6f}", f"{row.acc_mean:.6f}",
                        f"{row.wf1_delta:+.6f}", f"{row.acc_delta:+.6f}",
                        p_str, row.param_count])
    _write_manifest(args.out, "ablate", argv, config, fp, args.base_seed,
                    ["ablation.csv"], {"total_seconds": time.time() - t0})
    print(f"ablation table: {table_path}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="emofuse",
                                     description="tri-modal emotion recognition experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--classes", type=int, default=6)
    p.add_argument("--conversations", type=int, default=60)
    p.add_argument("--min-utts", type=int, default=4)
    p.add_argument("--max-utts", type=int, default=8)
    p.add_argument("--dim-text", type=int, default=32)
    p.add_argument("--dim-audio", type=int, default=32)
    p.add_argument("--dim-visual", type=int, default=32)
    p.add_argument("--spread", type=float, default=0.05)
    p.set_defaults(fn=cmd_synth)

    def add_train_flags(p):
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--split-seed", type=int, dest="split_seed")
        p.add_argument("--lr", type=float)
        p.add_argument("--lr-min", type=float, dest="lr_min")
        p.add_argument("--batch-size", type=int, dest="batch_size")
        p.add_argument("--dropout", type=float)
        p.add_argument("--weight-decay", type=float, dest="weight_decay")
        p.add_argument("--epochs", type=int)
        p.add_argument("--d", type=int)
        p.add_argument("--heads", type=int)
        p.add_argument("--rounds", type=int)
        p.add_argument("--target-train-acc", type=float, dest="target_train_acc")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("train", help="train a model")
    add_train_flags(p)
    p.add_argument("--ablation", choices=sorted(ABLATIONS))
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "valid", "test", "all"), default="test")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    add_train_flags(p)
    p.add_argument("--grid", default=",".join(tr.GRID_DEFAULT))
    p.add_argument("--seeds", type=int, default=3, help="number of seeds per variant")
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--eval-split", choices=("train", "valid", "test"), default="test")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args, argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (dataio.DataError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (tr.TrainingDiverged, NumericsError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
