"""Command-line interface for the exporter.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import pipeline, planetoid


def cmd_export_dataset(args) -> int:
    if args.download:
        planetoid.download_raw(args.name, args.raw_dir)
    summary = pipeline.export_dataset(args.name, args.raw_dir, args.out)
    print(json.dumps(summary))
    return 0


def cmd_train_export(args) -> int:
    manifest = pipeline.train_and_export(
        args.bundle,
        args.out,
        kind=args.kind,
        hidden=args.hidden,
        heads=args.heads,
        epochs=args.epochs,
        lr=args.lr,
        weight_decay=args.weight_decay,
        dropout=args.dropout,
        seed=args.seed,
        dataset=args.dataset,
    )
    acc = manifest["accuracies"]
    print(
        f"trained {args.kind}: train {acc['train']:.4f} "
        f"val {acc['val']:.4f} test {acc['test']:.4f} -> {args.out}"
    )
    return 0


def cmd_crosscheck(args) -> int:
    diff = pipeline.crosscheck(args.bundle, args.weights, args.probs)
    print(f"max-abs-diff {diff:.3e}")
    if args.tolerance is not None and diff > args.tolerance:
        print(f"error: diff {diff:.3e} exceeds tolerance {args.tolerance:.3e}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapsparse-export",
        description="Train reference GNNs and export shapsparse bundles/weights",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export-dataset", help="raw citation files -> bundle directory")
    p.add_argument("--name", required=True, choices=planetoid.DATASETS)
    p.add_argument("--raw-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--download", action="store_true", help="fetch missing raw files first")
    p.set_defaults(func=cmd_export_dataset)

    p = sub.add_parser("train-export", help="train on a bundle and export weights")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", choices=("gcn", "gat"), default="gcn")
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset", default="", help="name recorded in the manifest")
    p.set_defaults(func=cmd_train_export)

    p = sub.add_parser("crosscheck", help="compare engine probabilities against probs.f32")
    p.add_argument("--bundle", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--tolerance", type=float, default=None)
    p.set_defaults(func=cmd_crosscheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
