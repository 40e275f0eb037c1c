"""Independent writers for the shapsparse on-disk formats.

These deliberately do not call into shapsparse's own serializers: the
consumer validates what this package writes, so keeping the two
implementations separate turns every load into a cross-check of both.
All integers are little-endian; floats are IEEE-754 binary32.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1


def _write_atomic(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bundle(
    out_dir,
    *,
    edges: np.ndarray,  # (M, 2) directed (src, dst), deduplicated, no self-loops
    features: np.ndarray,  # (N, F)
    labels: np.ndarray,  # (N,)
    train_mask: np.ndarray,
    val_mask: np.ndarray,
    test_mask: np.ndarray,
    num_classes: int,
) -> None:
    """Canonicalize and write a bundle directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = int(features.shape[0])
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size:
        edges = np.unique(edges, axis=0)  # sorts by (src, dst): canonical order
        if (edges[:, 0] == edges[:, 1]).any():
            raise ValueError("self-loops must be stripped before writing")
    m = int(edges.shape[0])
    offsets = np.zeros(n + 1, dtype=np.uint64)
    np.cumsum(np.bincount(edges[:, 0], minlength=n), out=offsets[1:])

    meta = {
        "num_nodes": n,
        "num_edges": m,
        "num_features": int(features.shape[1]),
        "num_classes": int(num_classes),
        "format_version": FORMAT_VERSION,
    }
    _write_atomic(out / "meta.json", (json.dumps(meta, indent=2) + "\n").encode("utf-8"))
    _write_atomic(out / "csr_offsets.u64", offsets.astype("<u8").tobytes())
    _write_atomic(out / "csr_targets.u32", edges[:, 1].astype("<u4").tobytes())
    _write_atomic(out / "features.f32", np.ascontiguousarray(features, dtype="<f4").tobytes())
    _write_atomic(out / "labels.u32", np.asarray(labels).astype("<u4").tobytes())
    for name, mask in (("train_mask", train_mask), ("val_mask", val_mask), ("test_mask", test_mask)):
        _write_atomic(out / f"{name}.u8", np.asarray(mask, dtype=bool).astype("u1").tobytes())


def write_weights(out_dir, kind: str, layers: list[dict]) -> list[dict]:
    """Write weights.json + weights.f32.

    layers: per layer a dict of tensors; GCN needs {'weight', 'bias'}, GAT
    needs {'weight', 'att_src', 'att_dst', 'bias'} plus 'merge' and
    'leaky_slope' entries. Returns the tensor manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensor_names = ("weight", "bias") if kind == "gcn" else ("weight", "att_src", "att_dst", "bias")
    manifest = []
    blobs = []
    offset = 0
    arch_layers = []
    for i, layer in enumerate(layers):
        for name in tensor_names:
            arr = np.ascontiguousarray(layer[name], dtype="<f4")
            manifest.append(
                {"name": f"layers.{i}.{name}", "shape": list(arr.shape), "offset": offset}
            )
            blobs.append(arr.tobytes())
            offset += arr.nbytes
        if kind == "gcn":
            w = np.asarray(layer["weight"])
            arch_layers.append({"in_dim": int(w.shape[0]), "out_dim": int(w.shape[1])})
        else:
            w = np.asarray(layer["weight"])
            arch_layers.append(
                {
                    "in_dim": int(w.shape[1]),
                    "head_dim": int(w.shape[2]),
                    "heads": int(w.shape[0]),
                    "merge": layer.get("merge", "concat"),
                    "leaky_slope": float(layer.get("leaky_slope", 0.2)),
                }
            )
    arch = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "layers": arch_layers,
        "tensors": manifest,
    }
    _write_atomic(out / "weights.json", (json.dumps(arch, indent=2) + "\n").encode("utf-8"))
    _write_atomic(out / "weights.f32", b"".join(blobs))
    return manifest


def write_probs(path, probs: np.ndarray) -> None:
    """Row-major (N, C) float32 probabilities from the training framework."""
    _write_atomic(Path(path), np.ascontiguousarray(probs, dtype="<f4").tobytes())


def read_probs(path, num_nodes: int, num_classes: int) -> np.ndarray:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    return raw.reshape(num_nodes, num_classes).astype(np.float64)
