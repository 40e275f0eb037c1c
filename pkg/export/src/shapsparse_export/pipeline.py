"""End-to-end operations: dataset export, training + weight export, and
the cross-engine probability check against the consumer package."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import formats, planetoid
from .models import train_model


def export_dataset(name: str, raw_dir, out_dir, *, normalize_features: bool = True) -> dict:
    """Parse raw files and write a canonical bundle; returns summary counts."""
    parsed = planetoid.parse_raw(name, raw_dir)
    features = parsed["features"]
    if normalize_features:
        features = planetoid.row_normalize(features)
    edges = planetoid.symmetrized_edges(parsed["graph"], features.shape[0])
    formats.write_bundle(
        out_dir,
        edges=edges,
        features=features,
        labels=parsed["labels"],
        train_mask=parsed["train_mask"],
        val_mask=parsed["val_mask"],
        test_mask=parsed["test_mask"],
        num_classes=parsed["num_classes"],
    )
    # the consumer's loader is the validation gate for everything we wrote
    from shapsparse import load_bundle

    g = load_bundle(out_dir)
    return {
        "dataset": name,
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
        "num_features": g.num_features,
        "num_classes": g.num_classes,
    }


def train_and_export(
    bundle_dir,
    out_dir,
    *,
    kind: str = "gcn",
    hidden: int = 16,
    heads: int = 8,
    epochs: int = 200,
    lr: float = 0.01,
    weight_decay: float = 5e-4,
    dropout: float = 0.5,
    seed: int = 0,
    dataset: str = "",
) -> dict:
    """Train on a bundle, export weights + inference probs + manifest."""
    from shapsparse import load_bundle

    g = load_bundle(bundle_dir)
    edges = np.stack([g.edge_src, np.asarray(g.csr_targets)], axis=1)
    result = train_model(
        kind=kind,
        edges=edges,
        features=g.features,
        labels=g.labels,
        train_mask=g.train_mask,
        val_mask=g.val_mask,
        test_mask=g.test_mask,
        num_classes=g.num_classes,
        hidden=hidden,
        heads=heads,
        epochs=epochs,
        lr=lr,
        weight_decay=weight_decay,
        dropout=dropout,
        seed=seed,
    )
    out = Path(out_dir)
    tensor_manifest = formats.write_weights(out, kind, result.model.export_layers())
    formats.write_probs(out / "probs.f32", result.probs)
    manifest = {
        "format_version": formats.FORMAT_VERSION,
        "dataset": dataset or str(bundle_dir),
        "model": {
            "kind": kind,
            "hidden": hidden,
            "heads": heads if kind == "gat" else None,
            "dropout": dropout,
        },
        "training": {
            "epochs": epochs,
            "lr": lr,
            "weight_decay": weight_decay,
            "optimizer": "adam",
            "seed": seed,
        },
        "split_sizes": {
            "train": int(g.train_mask.sum()),
            "val": int(g.val_mask.sum()),
            "test": int(g.test_mask.sum()),
        },
        "accuracies": result.accuracies,
        "tensors": tensor_manifest,
    }
    formats._write_atomic(
        out / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode("utf-8")
    )
    return manifest


def crosscheck(bundle_dir, weights_dir, probs_path) -> float:
    """Max elementwise |consumer-engine probs - framework probs|."""
    from shapsparse import full_graph_probs, load_bundle, load_weights

    g = load_bundle(bundle_dir)
    w = load_weights(weights_dir)
    ours = formats.read_probs(probs_path, g.num_nodes, g.num_classes)
    theirs = full_graph_probs(g, w)
    return float(np.abs(ours - theirs).max())
