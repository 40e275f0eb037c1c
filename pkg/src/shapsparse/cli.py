"""Command-line interface.

Subcommands mirror the pipeline stages: gen-synth, explain, aggregate,
sparsify, sweep, macs. Flags override values from an optional TOML/JSON
config file, which overrides built-in defaults. Every command echoes its
resolved configuration into the output directory so a run is reproducible
from that file alone.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bundle import (
    FORMAT_VERSION,
    SynthParams,
    generate_synthetic,
    load_bundle,
    save_bundle,
    save_planted_truth,
    atomic_write,
)
from .engine import count_macs, full_graph_probs, load_weights
from .explainers import METHODS, explain_all, read_explanations, write_explanations
from .evaluate import run_sweep, write_curve_svg, write_report_csv, write_report_json
from .sparsify import (
    AGGREGATION_MODES,
    aggregate,
    keep_count,
    materialize,
    read_scores_csv,
    sparsify,
    write_kept,
    write_scores_csv,
)

DEFAULTS = {
    "explainer": "kernel",
    "k": None,
    "seed": 0,
    "h": 1e-3,
    "n_limit": 20,
    "aggregation": "mean",
    "abs_transform": False,
    "taus": [0.0],
    "fidelity_fraction": 0.1,
    "nodes": "all",
    "renormalize_per_mask": False,
    "workers": 1,
    "plot": False,
}


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 <= value < 1.0:
        raise argparse.ArgumentTypeError(f"value {text} must lie in [0, 1)")
    return value


def _tau_list(text: str) -> list[float]:
    try:
        taus = [float(t) for t in text.split(",") if t.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad tau list {text!r}: {exc}")
    for t in taus:
        if not 0.0 <= t < 1.0:
            raise argparse.ArgumentTypeError(f"tau {t} must lie in [0, 1)")
    if taus != sorted(taus):
        raise argparse.ArgumentTypeError("taus must be sorted ascending")
    return taus


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"probability {text} must lie in [0, 1]")
    return value


def _load_config_file(path: str) -> dict:
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix == ".toml":
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(raw.decode("utf-8"))
    return json.loads(raw.decode("utf-8"))


def _resolve(args: argparse.Namespace, keys) -> dict:
    """flags > config file > defaults."""
    file_cfg = _load_config_file(args.config) if getattr(args, "config", None) else {}
    cfg = {}
    for key in keys:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            cfg[key] = flag_val
        elif key in file_cfg:
            cfg[key] = file_cfg[key]
        else:
            cfg[key] = DEFAULTS[key]
    return cfg


def _echo_config(out_dir: Path, command: str, cfg: dict) -> None:
    payload = {"command": command, "format_version": FORMAT_VERSION, **cfg}
    atomic_write(out_dir / "config.json", (json.dumps(payload, indent=2) + "\n").encode("utf-8"))


def _node_filter(spec: str, g) -> list[int] | None:
    if spec == "all":
        return None
    if spec == "test":
        return [int(v) for v in np.flatnonzero(g.test_mask)]
    path = Path(spec)
    if not path.is_file():
        raise ValueError(f"node filter {spec!r} is neither 'all', 'test', nor a file")
    return [int(line) for line in path.read_text().split()]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_synth(args, parser) -> int:
    out = _out_dir(args)
    params = SynthParams(
        nodes_per_class=args.nodes_per_class,
        num_classes=args.classes,
        p_in=args.p_in,
        p_out=args.p_out,
        num_features=args.features,
        noise_std=args.noise_std,
        train_frac=args.train_frac,
        val_frac=args.val_frac,
    )
    g, truth = generate_synthetic(args.seed, params)
    save_bundle(g, out)
    save_planted_truth(truth, out / "planted_noise.u8")
    _echo_config(out, "gen-synth", {"seed": args.seed, **params.__dict__})
    print(f"wrote bundle: {g.num_nodes} nodes, {g.num_edges} edges, "
          f"{truth.noise_fraction:.3f} noise fraction -> {out}")
    return 0


def _explain_to_file(g, w, cfg, out: Path):
    nodes = _node_filter(cfg["nodes"], g)
    explanations, failures = explain_all(
        g, w, cfg["explainer"],
        nodes=nodes, k=cfg["k"], seed=cfg["seed"], h=cfg["h"],
        n_limit=cfg["n_limit"], renormalize_per_mask=cfg["renormalize_per_mask"],
        workers=cfg["workers"],
    )
    write_explanations(out / "explanations.jsonl", explanations, failures)
    return explanations, failures


def cmd_explain(args, parser) -> int:
    cfg = _resolve(args, ["explainer", "k", "seed", "h", "n_limit", "nodes",
                          "renormalize_per_mask", "workers"])
    g = load_bundle(args.bundle)
    w = load_weights(args.weights)
    out = _out_dir(args)
    explanations, failures = _explain_to_file(g, w, cfg, out)
    _echo_config(out, "explain", {"bundle": str(args.bundle), "weights": str(args.weights), **cfg})
    print(f"explained {len(explanations)} nodes ({len(failures)} failures) -> {out / 'explanations.jsonl'}")
    return 0


def cmd_aggregate(args, parser) -> int:
    cfg = _resolve(args, ["aggregation", "abs_transform"])
    g = load_bundle(args.bundle)
    explanations, _ = read_explanations(args.explanations)
    probs = None
    if cfg["aggregation"] == "weighted_mean":
        if args.weights is None:
            parser.error("--weights is required for --aggregation weighted_mean")
        w = load_weights(args.weights)
        full = full_graph_probs(g, w)
        probs = full[np.arange(g.num_nodes), np.argmax(full, axis=1)]
    scores = aggregate(explanations, g.num_edges, cfg["aggregation"],
                       cfg["abs_transform"], probs)
    out = _out_dir(args)
    write_scores_csv(out / "scores.csv", g, scores)
    _echo_config(out, "aggregate", {"bundle": str(args.bundle),
                                    "explanations": str(args.explanations), **cfg})
    print(f"aggregated {int(scores.scored.sum())}/{g.num_edges} edges -> {out / 'scores.csv'}")
    return 0


def cmd_sparsify(args, parser) -> int:
    g = load_bundle(args.bundle)
    scores = read_scores_csv(args.scores)
    sp = sparsify(g, scores, args.tau)
    out = _out_dir(args)
    pruned = materialize(sp)
    save_bundle(pruned, out)
    write_kept(out / "kept.u32", sp.kept)
    _echo_config(out, "sparsify", {"bundle": str(args.bundle), "scores": str(args.scores),
                                   "tau": args.tau})
    print(f"kept {sp.kept.size}/{g.num_edges} edges at tau={args.tau} -> {out}")
    return 0


def cmd_sweep(args, parser) -> int:
    cfg = _resolve(args, ["explainer", "k", "seed", "h", "n_limit", "nodes",
                          "renormalize_per_mask", "workers", "aggregation",
                          "abs_transform", "taus", "fidelity_fraction", "plot"])
    g = load_bundle(args.bundle)
    w = load_weights(args.weights)
    out = _out_dir(args)
    explanations, failures = _explain_to_file(g, w, cfg, out)
    probs = None
    if cfg["aggregation"] == "weighted_mean":
        full = full_graph_probs(g, w)
        probs = full[np.arange(g.num_nodes), np.argmax(full, axis=1)]
    scores = aggregate(explanations, g.num_edges, cfg["aggregation"],
                       cfg["abs_transform"], probs)
    write_scores_csv(out / "scores.csv", g, scores)
    metadata = {
        "dataset": str(args.bundle),
        "model_kind": w.kind,
        "explainer": cfg["explainer"],
        "aggregation": cfg["aggregation"],
        "abs_transform": cfg["abs_transform"],
        "seed": cfg["seed"],
        "k": cfg["k"],
        "fidelity_fraction": cfg["fidelity_fraction"],
        "failures": len(failures),
    }
    report = run_sweep(g, w, scores, cfg["taus"],
                       fidelity_fraction=cfg["fidelity_fraction"], metadata=metadata)
    write_report_csv(report, out / "report.csv")
    write_report_json(report, out / "report.json")
    if cfg["plot"]:
        write_curve_svg(report, out / "curve.svg")
    _echo_config(out, "sweep", {"bundle": str(args.bundle), "weights": str(args.weights), **cfg})
    for row in report.rows:
        print(f"tau={row.tau:.2f} kept={row.kept_edges} acc={row.test_accuracy:.4f} "
              f"fid+={row.fidelity_plus:.4f} fid-={row.fidelity_minus:.4f} macs={row.macs}")
    return 0


def cmd_macs(args, parser) -> int:
    w = load_weights(args.weights)
    if args.bundle is not None:
        g = load_bundle(args.bundle)
        n, m = g.num_nodes, g.num_edges
    elif args.num_nodes is not None and args.num_edges is not None:
        n, m = args.num_nodes, args.num_edges
    else:
        parser.error("need --bundle or both --num-nodes and --num-edges")
    taus = args.taus if args.taus is not None else [0.0]
    lines = ["tau,kept_edges,macs"]
    for tau in taus:
        kept = keep_count(m, tau)
        lines.append(f"{tau:.6f},{kept},{count_macs(w, n, kept)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(out, text.encode("utf-8"))
    print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapsparse",
        description="Shapley-value edge scoring and graph sparsification for GNN inference",
    )
    parser.add_argument("--version", action="version",
                        version=f"shapsparse {__version__} (bundle format v{FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, config=True):
        if config:
            p.add_argument("--config", help="TOML or JSON file with defaults for any flag")

    p = sub.add_parser("gen-synth", help="generate a planted-truth synthetic bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--nodes-per-class", type=int, default=20)
    p.add_argument("--p-in", type=_probability, default=0.1)
    p.add_argument("--p-out", type=_probability, default=0.025)
    p.add_argument("--features", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=0.05)
    p.add_argument("--train-frac", type=_fraction, default=0.4)
    p.add_argument("--val-frac", type=_fraction, default=0.2)
    p.set_defaults(func=cmd_gen_synth)

    def add_explain_flags(p):
        p.add_argument("--explainer", choices=METHODS)
        p.add_argument("--k", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--h", type=float)
        p.add_argument("--n-limit", type=int, dest="n_limit")
        p.add_argument("--nodes", help="'all', 'test', or a file of node indices")
        p.add_argument("--renormalize-per-mask", action="store_const", const=True,
                       dest="renormalize_per_mask")
        p.add_argument("--workers", type=int)

    p = sub.add_parser("explain", help="write per-node explanations.jsonl")
    p.add_argument("--bundle", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    add_explain_flags(p)
    add_common(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("aggregate", help="fold explanations into scores.csv")
    p.add_argument("--bundle", required=True)
    p.add_argument("--explanations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", help="required for weighted_mean")
    p.add_argument("--aggregation", choices=AGGREGATION_MODES)
    p.add_argument("--abs-transform", action="store_const", const=True, dest="abs_transform")
    add_common(p)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("sparsify", help="materialize a pruned bundle + kept.u32")
    p.add_argument("--bundle", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--tau", type=_fraction, required=True)
    p.add_argument("--out", required=True)
    add_common(p)
    p.set_defaults(func=cmd_sparsify)

    p = sub.add_parser("sweep", help="explain, aggregate, and evaluate across taus")
    p.add_argument("--bundle", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    add_explain_flags(p)
    p.add_argument("--aggregation", choices=AGGREGATION_MODES)
    p.add_argument("--abs-transform", action="store_const", const=True, dest="abs_transform")
    p.add_argument("--taus", type=_tau_list)
    p.add_argument("--fidelity-fraction", type=_fraction, dest="fidelity_fraction")
    p.add_argument("--plot", action="store_const", const=True)
    add_common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("macs", help="message-passing MAC table across taus")
    p.add_argument("--weights", required=True)
    p.add_argument("--bundle")
    p.add_argument("--num-nodes", type=int, dest="num_nodes")
    p.add_argument("--num-edges", type=int, dest="num_edges")
    p.add_argument("--taus", type=_tau_list)
    p.add_argument("--out")
    add_common(p, config=False)
    p.set_defaults(func=cmd_macs)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
