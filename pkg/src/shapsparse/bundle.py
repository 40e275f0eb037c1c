"""Immutable CSR graph bundles, hop-neighborhood extraction, synthetic graphs.

A bundle stores one node-classification instance: a directed graph in CSR
form (row = source node, targets sorted ascending), dense float32 features,
integer labels, and disjoint train/val/test masks. Edges are identified by
their CSR position (edge id), which is the canonical (src, dst) ascending
order; all tie-breaking elsewhere in the package refers to this order.

Self-loops are never stored: model layers add them internally, and they are
never scored or pruned. Undirected input graphs are stored as two directed
edges that are scored and pruned independently.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1

META_FILE = "meta.json"
BUNDLE_FILES = {
    "csr_offsets": ("csr_offsets.u64", "<u8"),
    "csr_targets": ("csr_targets.u32", "<u4"),
    "features": ("features.f32", "<f4"),
    "labels": ("labels.u32", "<u4"),
    "train_mask": ("train_mask.u8", "u1"),
    "val_mask": ("val_mask.u8", "u1"),
    "test_mask": ("test_mask.u8", "u1"),
}


class BundleError(ValueError):
    """A bundle file or in-memory graph violates the format contract."""


def atomic_write(path, data: bytes) -> None:
    """Write bytes via a same-directory temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


_atomic_write = atomic_write


@dataclass(frozen=True)
class GraphBundle:
    """One immutable node-classification instance.

    Safe to share read-only across workers; derived adjacency views are
    cached on first use and depend only on the stored arrays.
    """

    num_nodes: int
    num_edges: int
    csr_offsets: np.ndarray  # int64, length N+1
    csr_targets: np.ndarray  # int64, length M
    features: np.ndarray  # float32, N x F
    labels: np.ndarray  # int64, length N
    train_mask: np.ndarray  # bool, length N
    val_mask: np.ndarray
    test_mask: np.ndarray
    num_classes: int

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def edge_src(self) -> np.ndarray:
        """Source node of every edge id (int64, length M)."""
        return np.repeat(
            np.arange(self.num_nodes, dtype=np.int64), np.diff(self.csr_offsets)
        )

    @cached_property
    def edge_dst(self) -> np.ndarray:
        """Destination node of every edge id; alias of csr_targets."""
        return self.csr_targets

    @cached_property
    def in_degree(self) -> np.ndarray:
        """Number of stored edges pointing into each node."""
        return np.bincount(self.csr_targets, minlength=self.num_nodes).astype(np.int64)

    @cached_property
    def _in_adjacency(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(offsets, sources, edge_ids) of edges grouped by destination.

        Within one destination, sources ascend (stable sort of the canonical
        order), so the grouping is itself deterministic.
        """
        order = np.argsort(self.csr_targets, kind="stable").astype(np.int64)
        offsets = np.zeros(self.num_nodes + 1, dtype=np.int64)
        np.cumsum(self.in_degree, out=offsets[1:])
        return offsets, self.edge_src[order], order

    def in_edges(self, v: int) -> tuple[np.ndarray, np.ndarray]:
        """(source nodes, edge ids) of all edges pointing into v."""
        offsets, sources, ids = self._in_adjacency
        lo, hi = offsets[v], offsets[v + 1]
        return sources[lo:hi], ids[lo:hi]

    def validate(self) -> None:
        """Check every structural invariant; raise BundleError on violation."""
        n, m = self.num_nodes, self.num_edges
        off, tgt = self.csr_offsets, self.csr_targets
        if n < 1:
            raise BundleError("num_nodes must be >= 1")
        if off.shape != (n + 1,):
            raise BundleError(f"csr_offsets has length {off.shape[0]}, expected {n + 1}")
        if tgt.shape != (m,):
            raise BundleError(f"csr_targets has length {tgt.shape[0]}, expected {m}")
        if off[0] != 0:
            raise BundleError("csr_offsets[0] must be 0")
        if off[n] != m:
            raise BundleError(f"csr_offsets[{n}] is {off[n]}, expected num_edges {m}")
        if np.any(np.diff(off) < 0):
            first = int(np.argmax(np.diff(off) < 0))
            raise BundleError(f"csr_offsets decreases at record {first}")
        if m:
            if tgt.min() < 0 or tgt.max() >= n:
                bad = int(np.argmax((tgt < 0) | (tgt >= n)))
                raise BundleError(f"csr_targets record {bad} out of range: {tgt[bad]}")
            if m > 1:
                # Strictly increasing targets per row: no duplicates, canonical order.
                ok = np.diff(tgt) > 0
                starts = off[1:-1]
                starts = starts[(starts > 0) & (starts < m)]
                ok[starts - 1] = True  # pairs spanning a row boundary are exempt
                if not ok.all():
                    bad = int(np.argmin(ok))
                    raise BundleError(
                        f"csr_targets not strictly increasing within a row at record {bad + 1}"
                    )
            if np.any(self.edge_src == tgt):
                bad = int(np.argmax(self.edge_src == tgt))
                raise BundleError(f"self-loop stored at edge record {bad}")
        if self.features.shape[0] != n:
            raise BundleError(f"features has {self.features.shape[0]} rows, expected {n}")
        if self.labels.shape != (n,):
            raise BundleError("labels length mismatch")
        if self.num_classes < 1:
            raise BundleError("num_classes must be >= 1")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            bad = int(np.argmax((self.labels < 0) | (self.labels >= self.num_classes)))
            raise BundleError(f"labels record {bad} outside [0, {self.num_classes})")
        for name in ("train_mask", "val_mask", "test_mask"):
            mask = getattr(self, name)
            if mask.shape != (n,) or mask.dtype != np.bool_:
                raise BundleError(f"{name} must be boolean of length {n}")
        overlap = (
            self.train_mask.astype(int) + self.val_mask.astype(int) + self.test_mask.astype(int)
        )
        if overlap.max() > 1:
            bad = int(np.argmax(overlap > 1))
            raise BundleError(f"split masks overlap at record {bad}")


@dataclass(frozen=True)
class ComputationalGraph:
    """All nodes and edges that can influence an l-layer prediction at center."""

    center: int
    nodes: np.ndarray  # sorted node indices
    edge_ids: np.ndarray  # sorted edge ids


def edge_endpoints(g: GraphBundle, edge_ids) -> tuple[np.ndarray, np.ndarray]:
    """(src, dst) arrays for the given edge ids."""
    ids = np.asarray(edge_ids, dtype=np.int64)
    return g.edge_src[ids], g.csr_targets[ids]


def extract_computational_graph(g: GraphBundle, v: int, layers: int) -> ComputationalGraph:
    """Reverse-BFS closure of v: every node and edge on a message path of
    length <= layers ending at v.

    An edge (a, b) is included iff 1 + dist(b) <= layers, where dist(x) is
    the minimum number of message hops from x to v. Masking any excluded
    edge leaves the model output at v unchanged.
    """
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range [0, {g.num_nodes})")
    if layers < 1:
        raise ValueError("layer count must be >= 1")
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[v] = 0
    frontier = [v]
    for depth in range(1, layers + 1):
        nxt = []
        for node in frontier:
            sources, _ = g.in_edges(node)
            for s in sources:
                if dist[s] < 0:
                    dist[s] = depth
                    nxt.append(int(s))
        frontier = nxt
    nodes = np.flatnonzero(dist >= 0).astype(np.int64)
    receivers = nodes[dist[nodes] <= layers - 1]
    if receivers.size:
        edge_ids = np.sort(np.concatenate([g.in_edges(int(b))[1] for b in receivers]))
    else:
        edge_ids = np.zeros(0, dtype=np.int64)
    return ComputationalGraph(center=v, nodes=nodes, edge_ids=edge_ids)


# ---------------------------------------------------------------------------
# On-disk format


def _read_exact(path: Path, dtype: str, count: int) -> np.ndarray:
    if not path.is_file():
        raise BundleError(f"missing file: {path}")
    raw = path.read_bytes()
    want = count * np.dtype(dtype).itemsize
    if len(raw) != want:
        raise BundleError(f"{path}: expected {want} bytes, found {len(raw)} (byte offset {min(want, len(raw))})")
    return np.frombuffer(raw, dtype=dtype)


def load_bundle(path) -> GraphBundle:
    """Load and fully validate a bundle directory."""
    root = Path(path)
    meta_path = root / META_FILE
    if not meta_path.is_file():
        raise BundleError(f"missing file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise BundleError(f"{meta_path}: invalid JSON ({exc})") from exc
    for key in ("num_nodes", "num_edges", "num_features", "num_classes", "format_version"):
        if key not in meta:
            raise BundleError(f"{meta_path}: missing key {key!r}")
    if meta["format_version"] != FORMAT_VERSION:
        raise BundleError(
            f"{meta_path}: format_version {meta['format_version']} unsupported (want {FORMAT_VERSION})"
        )
    n, m, f = int(meta["num_nodes"]), int(meta["num_edges"]), int(meta["num_features"])

    offsets = _read_exact(root / BUNDLE_FILES["csr_offsets"][0], "<u8", n + 1).astype(np.int64)
    targets = _read_exact(root / BUNDLE_FILES["csr_targets"][0], "<u4", m).astype(np.int64)
    features = _read_exact(root / BUNDLE_FILES["features"][0], "<f4", n * f).reshape(n, f)
    labels = _read_exact(root / BUNDLE_FILES["labels"][0], "<u4", n).astype(np.int64)
    masks = {}
    for name in ("train_mask", "val_mask", "test_mask"):
        raw = _read_exact(root / BUNDLE_FILES[name][0], "u1", n)
        bad = np.flatnonzero(raw > 1)
        if bad.size:
            raise BundleError(
                f"{root / BUNDLE_FILES[name][0]}: value {raw[bad[0]]} at byte offset {bad[0]} (want 0/1)"
            )
        masks[name] = raw.astype(bool)

    g = GraphBundle(
        num_nodes=n,
        num_edges=m,
        csr_offsets=offsets,
        csr_targets=targets,
        features=np.ascontiguousarray(features, dtype=np.float32),
        labels=labels,
        train_mask=masks["train_mask"],
        val_mask=masks["val_mask"],
        test_mask=masks["test_mask"],
        num_classes=int(meta["num_classes"]),
    )
    g.validate()
    return g


def save_bundle(g: GraphBundle, path) -> None:
    """Write a validated bundle directory (atomic per file)."""
    g.validate()
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
        "num_features": g.num_features,
        "num_classes": g.num_classes,
        "format_version": FORMAT_VERSION,
    }
    _atomic_write(root / META_FILE, (json.dumps(meta, indent=2) + "\n").encode("utf-8"))
    _atomic_write(root / BUNDLE_FILES["csr_offsets"][0], g.csr_offsets.astype("<u8").tobytes())
    _atomic_write(root / BUNDLE_FILES["csr_targets"][0], g.csr_targets.astype("<u4").tobytes())
    _atomic_write(root / BUNDLE_FILES["features"][0], np.ascontiguousarray(g.features, dtype="<f4").tobytes())
    _atomic_write(root / BUNDLE_FILES["labels"][0], g.labels.astype("<u4").tobytes())
    for name in ("train_mask", "val_mask", "test_mask"):
        _atomic_write(root / BUNDLE_FILES[name][0], getattr(g, name).astype("u1").tobytes())


# ---------------------------------------------------------------------------
# Synthetic graphs with planted edge labels


@dataclass(frozen=True)
class SynthParams:
    """Knobs for the planted-truth generator.

    Intra-class edges are signal; cross-class edges are noise. Features are
    a one-hot class indicator plus Gaussian jitter, so a feature-only model
    can classify and edge noise actively misleads aggregation.
    """

    nodes_per_class: int = 20
    num_classes: int = 3
    p_in: float = 0.1
    p_out: float = 0.025
    num_features: int = 0  # 0 means num_classes
    noise_std: float = 0.05
    train_frac: float = 0.4
    val_frac: float = 0.2

    def validate(self) -> None:
        if not (0.0 <= self.p_in <= 1.0 and 0.0 <= self.p_out <= 1.0):
            raise ValueError("edge probabilities must lie in [0, 1]")
        if self.nodes_per_class < 1 or self.num_classes < 1:
            raise ValueError("need at least one node per class and one class")
        if self.num_features and self.num_features < self.num_classes:
            raise ValueError("num_features must be 0 or >= num_classes")
        if not (0.0 <= self.train_frac and 0.0 <= self.val_frac
                and self.train_frac + self.val_frac < 1.0):
            raise ValueError("train_frac + val_frac must leave room for a test split")


@dataclass(frozen=True)
class PlantedTruth:
    """Per-edge ground truth for a synthetic bundle."""

    is_noise: np.ndarray  # bool per edge id; True = cross-class

    @property
    def noise_fraction(self) -> float:
        return float(self.is_noise.mean()) if self.is_noise.size else 0.0


def generate_synthetic(seed: int, params: SynthParams) -> tuple[GraphBundle, PlantedTruth]:
    """Deterministic planted-partition graph with labeled signal/noise edges.

    Undirected pairs are drawn once per (i < j) and stored as two directed
    edges. Identical seed and params give byte-identical bundles.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    c, npc = params.num_classes, params.nodes_per_class
    n = c * npc
    nf = params.num_features or c
    labels = np.repeat(np.arange(c, dtype=np.int64), npc)

    same = labels[:, None] == labels[None, :]
    prob = np.where(same, params.p_in, params.p_out)
    draw = rng.random((n, n))
    upper = np.triu(draw < prob, k=1)
    adj = upper | upper.T

    dense_src, dense_dst = np.nonzero(adj)  # row-major: canonical (src, dst) order
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(dense_src, minlength=n), out=offsets[1:])

    features = rng.normal(0.0, params.noise_std, size=(n, nf))
    features[np.arange(n), labels] += 1.0

    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    test = np.zeros(n, dtype=bool)
    n_train = max(1, math.floor(params.train_frac * npc)) if params.train_frac > 0 else 0
    n_val = max(1, math.floor(params.val_frac * npc)) if params.val_frac > 0 else 0
    for cls in range(c):
        base = cls * npc
        train[base : base + n_train] = True
        val[base + n_train : base + n_train + n_val] = True
        test[base + n_train + n_val : base + npc] = True

    g = GraphBundle(
        num_nodes=n,
        num_edges=int(dense_src.size),
        csr_offsets=offsets,
        csr_targets=dense_dst.astype(np.int64),
        features=features.astype(np.float32),
        labels=labels,
        train_mask=train,
        val_mask=val,
        test_mask=test,
        num_classes=c,
    )
    g.validate()
    truth = PlantedTruth(is_noise=(labels[dense_src] != labels[dense_dst]))
    return g, truth


def save_planted_truth(truth: PlantedTruth, path) -> None:
    _atomic_write(Path(path), truth.is_noise.astype("u1").tobytes())


def load_planted_truth(path) -> PlantedTruth:
    raw = np.frombuffer(Path(path).read_bytes(), dtype="u1")
    return PlantedTruth(is_noise=raw.astype(bool))
