"""Command-line entry points: train, sweep, emit.

Configuration comes from a JSON file (see README for the schema); the
flags below override individual fields. Exit code 0 means every requested
cell succeeded.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .checkpoint import save_checkpoint
from .errors import FlexPruneError
from .experiments import (
    CURVE_KINDS,
    ExperimentConfig,
    emit_curves,
    load_config,
    make_datasets,
    make_model,
    read_results_csv,
    run_sweep,
)
from .training import run_protocol, write_metrics_csv


def _add_common(p):
    p.add_argument("--config", help="JSON experiment configuration file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, help="override the run seed(s)")
    p.add_argument("--technique", choices=("magnitude", "relevance", "flexrel"))
    p.add_argument("--rho", type=float, help="pruning factor")
    p.add_argument("--delta", type=float, help="relevance weight in the combined score")
    p.add_argument("--dataset", help="synth | idx:<train_imgs>,<train_lbls>,<test_imgs>,<test_lbls>")
    p.add_argument("--cut-index", type=int, dest="cut_index", help="split-learning cut layer index")


def _build_config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    if args.dataset:
        if args.dataset == "synth":
            config.dataset = {"kind": "synth"}
        elif args.dataset.startswith("idx:"):
            paths = args.dataset[4:].split(",")
            if len(paths) != 4:
                raise FlexPruneError("idx dataset needs 4 comma-separated paths")
            config.dataset = {
                "kind": "idx",
                "train_images": paths[0],
                "train_labels": paths[1],
                "test_images": paths[2],
                "test_labels": paths[3],
            }
        else:
            raise FlexPruneError(f"unknown dataset spec {args.dataset!r}")
    if args.cut_index is not None:
        config.model["cut_index"] = args.cut_index
    if args.technique:
        config.techniques = [args.technique]
        config.train = replace(config.train, technique=args.technique)
    if args.rho is not None:
        config.rhos = [args.rho]
        config.train = replace(config.train, rho=args.rho)
    if args.delta is not None:
        config.deltas = [args.delta]
        config.train = replace(config.train, delta=args.delta)
    if args.seed is not None:
        config.seeds = [args.seed]
        config.train = replace(config.train, seed=args.seed)
    return config


def cmd_train(args) -> int:
    config = _build_config(args)
    os.makedirs(args.out, exist_ok=True)
    train, test = make_datasets(config)
    net = make_model(config, config.train.seed)
    result = run_protocol(net, train, test, config.train)
    write_metrics_csv(result.log, os.path.join(args.out, "metrics.csv"))
    if result.scores is not None:
        result.scores.to_csv(os.path.join(args.out, "scores.csv"))
    save_checkpoint(net, os.path.join(args.out, "model.fxpr"))
    print(f"final test accuracy: {result.log[-1].accuracy:.4f}")
    return 0


def cmd_sweep(args) -> int:
    config = _build_config(args)
    rows = run_sweep(config, args.out)
    failed = [r for r in rows if r.status != "ok"]
    print(f"sweep: {len(rows) - len(failed)}/{len(rows)} cells ok -> {args.out}/results.csv")
    for row in failed:
        print(f"  failed {row.technique} rho={row.rho} seed={row.seed}: {row.message}")
    return 1 if failed else 0


def cmd_emit(args) -> int:
    results = os.path.join(args.out, "results.csv")
    rows, targets = read_results_csv(results)
    path = emit_curves(rows, args.kind, args.out, targets)
    print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flexprune")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training/pruning protocol")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_sweep = sub.add_parser("sweep", help="run the full experiment sweep")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_emit = sub.add_parser("emit", help="emit curve CSVs from sweep results")
    _add_common(p_emit)
    p_emit.add_argument("--kind", choices=CURVE_KINDS, required=True)
    p_emit.set_defaults(func=cmd_emit)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FlexPruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
