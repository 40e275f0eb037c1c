"""Forward-only GCN/GAT inference with per-edge mask vectors.

The engine is the evaluand for every edge coalition: a mask assigns each
stored edge a weight in [0, 1] (0 = removed, 1 = present; fractional values
are allowed for finite-difference probes and may slightly exceed 1). Model
layers add self-loops internally; self-loops always participate and are not
maskable.

GCN masking semantics: the propagation matrix is normalized once on the
full graph (d~ = 1 + in-degree) and mask values scale its entries, without
renormalization. Pass ``renormalize_per_mask=True`` to recompute degrees
from the masked graph instead, which is also exactly what inference on a
materialized pruned graph computes.

GAT masking semantics: edges with mask 0 are excluded from the neighbor
softmax; other edges keep their softmax share scaled by the mask value.

All computation is float64 internally and is a pure function of
(bundle, weights, mask, targets): concurrent evaluation over shared inputs
is safe.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .bundle import FORMAT_VERSION, GraphBundle, extract_computational_graph

WEIGHTS_JSON = "weights.json"
WEIGHTS_BIN = "weights.f32"


class EngineError(ValueError):
    """Weights or mask are structurally invalid for the given graph."""


@dataclass(frozen=True)
class GCNLayer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class GATLayer:
    weight: np.ndarray  # (heads, in, head_dim)
    att_src: np.ndarray  # (heads, head_dim)
    att_dst: np.ndarray  # (heads, head_dim)
    bias: np.ndarray  # (merged out,)
    merge: str = "concat"  # 'concat' | 'mean'
    leaky_slope: float = 0.2

    @property
    def heads(self) -> int:
        return self.weight.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def head_dim(self) -> int:
        return self.weight.shape[2]

    @property
    def out_dim(self) -> int:
        if self.merge == "concat":
            return self.heads * self.head_dim
        return self.head_dim


@dataclass(frozen=True)
class ModelWeights:
    """Parameters of a forward-only message-passing classifier."""

    kind: str  # 'gcn' | 'gat'
    layers: tuple

    def validate(self) -> None:
        if self.kind not in ("gcn", "gat"):
            raise EngineError(f"unknown model kind {self.kind!r}")
        if not self.layers:
            raise EngineError("model needs at least one layer")
        for i, layer in enumerate(self.layers):
            want = GCNLayer if self.kind == "gcn" else GATLayer
            if not isinstance(layer, want):
                raise EngineError(f"layer {i} is not a {want.__name__}")
            for name in ("weight", "bias") + (("att_src", "att_dst") if self.kind == "gat" else ()):
                arr = getattr(layer, name)
                if not np.all(np.isfinite(arr)):
                    raise EngineError(f"non-finite value in layer {i} tensor {name}")
            if layer.bias.shape != (layer.out_dim,):
                raise EngineError(f"layer {i} bias shape {layer.bias.shape} != ({layer.out_dim},)")
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise EngineError(
                    f"layer {i} expects {self.layers[i].in_dim} inputs, "
                    f"previous layer emits {self.layers[i - 1].out_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def check_compatible(self, g: GraphBundle) -> None:
        self.validate()
        if g.num_features != self.in_dim:
            raise EngineError(
                f"feature dim {g.num_features} != model input dim {self.in_dim}"
            )
        if g.num_classes != self.out_dim:
            raise EngineError(
                f"num_classes {g.num_classes} != model output dim {self.out_dim}"
            )


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray  # (C,), sums to 1
    predicted_class: int  # argmax, ties to the lowest class index


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0.0, x, slope * x)


def _check_mask(g: GraphBundle, mask) -> np.ndarray:
    if mask is None:
        return np.ones(g.num_edges, dtype=np.float64)
    arr = np.asarray(mask, dtype=np.float64)
    if arr.shape != (g.num_edges,):
        raise EngineError(f"mask length {arr.shape} != num_edges {g.num_edges}")
    if not np.all(np.isfinite(arr)) or (arr.size and arr.min() < 0.0):
        raise EngineError("mask values must be finite and >= 0")
    return arr


# ---------------------------------------------------------------------------
# Full-graph forward


def _gcn_propagation(g: GraphBundle, mask: np.ndarray, renormalize: bool) -> sp.csr_matrix:
    n = g.num_nodes
    if renormalize:
        deg = 1.0 + np.bincount(g.csr_targets, weights=mask, minlength=n)
    else:
        deg = 1.0 + g.in_degree.astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(deg)
    vals = mask * inv_sqrt[g.csr_targets] * inv_sqrt[g.edge_src]
    rows = np.concatenate([g.csr_targets, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([g.edge_src, np.arange(n, dtype=np.int64)])
    data = np.concatenate([vals, 1.0 / deg])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def _gat_layer_full(
    g: GraphBundle, layer: GATLayer, x: np.ndarray, mask: np.ndarray,
    order: np.ndarray, seg_starts: np.ndarray, src_sorted: np.ndarray, dst_sorted: np.ndarray,
) -> np.ndarray:
    n = g.num_nodes
    mask_sorted = np.concatenate([mask, np.ones(n)])[order]  # self-loops carry 1
    included = mask_sorted > 0.0
    head_outs = []
    for h in range(layer.heads):
        z = x @ layer.weight[h]
        s_src = z @ layer.att_src[h]
        s_dst = z @ layer.att_dst[h]
        logits = _leaky_relu(s_src[src_sorted] + s_dst[dst_sorted], layer.leaky_slope)
        logits = np.where(included, logits, -np.inf)
        seg_max = np.maximum.reduceat(logits, seg_starts)
        ex = np.exp(logits - seg_max[dst_sorted])
        denom = np.add.reduceat(ex, seg_starts)
        alpha = ex / denom[dst_sorted] * mask_sorted
        head_outs.append(np.add.reduceat(alpha[:, None] * z[src_sorted], seg_starts, axis=0))
    if layer.merge == "concat":
        out = np.concatenate(head_outs, axis=1)
    else:
        out = np.mean(head_outs, axis=0)
    return out + layer.bias


def _forward_probs(
    g: GraphBundle, w: ModelWeights, mask: np.ndarray, renormalize: bool
) -> np.ndarray:
    x = g.features.astype(np.float64)
    if w.kind == "gcn":
        a_hat = _gcn_propagation(g, mask, renormalize)
        for i, layer in enumerate(w.layers):
            x = a_hat @ (x @ layer.weight) + layer.bias
            if i < len(w.layers) - 1:
                np.maximum(x, 0.0, out=x)
        return _softmax_rows(x)
    # GAT: group edges plus self-loops by destination once.
    n = g.num_nodes
    all_src = np.concatenate([g.edge_src, np.arange(n, dtype=np.int64)])
    all_dst = np.concatenate([g.csr_targets, np.arange(n, dtype=np.int64)])
    order = np.lexsort((all_src, all_dst))
    src_sorted, dst_sorted = all_src[order], all_dst[order]
    seg_starts = np.searchsorted(dst_sorted, np.arange(n))
    for i, layer in enumerate(w.layers):
        x = _gat_layer_full(g, layer, x, mask, order, seg_starts, src_sorted, dst_sorted)
        if i < len(w.layers) - 1:
            np.maximum(x, 0.0, out=x)
    return _softmax_rows(x)


def forward(
    g: GraphBundle,
    w: ModelWeights,
    mask=None,
    targets=None,
    *,
    renormalize_per_mask: bool = False,
) -> dict[int, Prediction]:
    """Run the model and return per-node predictions.

    targets: iterable of node indices, or None for every node. The output
    at a node depends only on mask entries inside its computational graph.
    """
    w.check_compatible(g)
    mask_arr = _check_mask(g, mask)
    probs = _forward_probs(g, w, mask_arr, renormalize_per_mask)
    nodes = range(g.num_nodes) if targets is None else targets
    out = {}
    for v in nodes:
        v = int(v)
        if not 0 <= v < g.num_nodes:
            raise IndexError(f"target node {v} out of range")
        row = probs[v]
        out[v] = Prediction(probs=row, predicted_class=int(np.argmax(row)))
    return out


def full_graph_probs(g: GraphBundle, w: ModelWeights) -> np.ndarray:
    """Unmasked class probabilities for every node, shape (N, C)."""
    w.check_compatible(g)
    return _forward_probs(g, w, _check_mask(g, None), False)


def predicted_classes(g: GraphBundle, w: ModelWeights) -> np.ndarray:
    """Full-graph argmax class per node (convenience for explainers/metrics)."""
    return np.argmax(full_graph_probs(g, w), axis=1)


# ---------------------------------------------------------------------------
# Batched coalition evaluation on one node's computational graph


class CoalitionEvaluator:
    """Evaluates many player-mask rows against one node's computational graph.

    Players are the edges of the center's computational graph in ascending
    edge-id order; all other edges are implicitly present. evaluate() takes
    a (k, n) float matrix of player masks and returns (k, C) class
    probabilities at the center. Work and memory are chunked so arbitrarily
    many coalitions can be evaluated.
    """

    def __init__(
        self,
        g: GraphBundle,
        w: ModelWeights,
        v: int,
        *,
        renormalize_per_mask: bool = False,
        chunk_elems: int = 1 << 24,
    ):
        w.check_compatible(g)
        self.g, self.w, self.v = g, w, int(v)
        self.renormalize = renormalize_per_mask
        self.chunk_elems = int(chunk_elems)
        cg = extract_computational_graph(g, v, len(w.layers))
        self.players = cg.edge_ids
        self.n = int(cg.edge_ids.size)

        self._s = int(cg.nodes.size)
        self._center_local = int(np.searchsorted(cg.nodes, v))
        self._src_local = np.searchsorted(cg.nodes, g.edge_src[cg.edge_ids])
        self._dst_local = np.searchsorted(cg.nodes, g.csr_targets[cg.edge_ids])
        self._x_local = g.features[cg.nodes].astype(np.float64)
        # Degree bookkeeping: in-edges outside the computational graph always
        # carry mask 1, so their contribution to masked degrees is constant.
        full_in = g.in_degree[cg.nodes].astype(np.float64)
        local_in = np.bincount(self._dst_local, minlength=self._s).astype(np.float64)
        self._deg_fixed = 1.0 + full_in - local_in
        self._deg_full = 1.0 + full_in
        if self.n:
            self._dst_incidence = np.zeros((self.n, self._s))
            self._dst_incidence[np.arange(self.n), self._dst_local] = 1.0
        else:
            self._dst_incidence = np.zeros((0, self._s))

    def _chunk_size(self) -> int:
        per_row = max(1, self._s * self._s)
        return max(1, min(1 << 16, self.chunk_elems // per_row))

    def evaluate(self, masks: np.ndarray) -> np.ndarray:
        masks = np.asarray(masks)
        if masks.ndim != 2 or masks.shape[1] != self.n:
            raise EngineError(f"mask matrix must be (k, {self.n})")
        k = masks.shape[0]
        out = np.empty((k, self.w.out_dim), dtype=np.float64)
        step = self._chunk_size()
        for lo in range(0, k, step):
            chunk = np.asarray(masks[lo : lo + step], dtype=np.float64)
            if self.w.kind == "gcn":
                out[lo : lo + chunk.shape[0]] = self._eval_gcn(chunk)
            else:
                out[lo : lo + chunk.shape[0]] = self._eval_gat(chunk)
        return out

    def evaluate_class(self, masks: np.ndarray, target: int) -> np.ndarray:
        """Probability of one class at the center for every mask row."""
        return self.evaluate(masks)[:, int(target)]

    def _propagation_batch(self, chunk: np.ndarray) -> np.ndarray:
        """(k, s, s) dense masked propagation matrices for GCN."""
        k, s = chunk.shape[0], self._s
        diag = np.arange(s)
        a = np.zeros((k, s, s))
        if self.renormalize:
            deg = self._deg_fixed[None, :] + chunk @ self._dst_incidence  # (k, s)
            inv_sqrt = 1.0 / np.sqrt(deg)
            a[:, diag, diag] = 1.0 / deg
            a[:, self._dst_local, self._src_local] = (
                chunk * inv_sqrt[:, self._dst_local] * inv_sqrt[:, self._src_local]
            )
            return a
        inv_sqrt = 1.0 / np.sqrt(self._deg_full)
        base = inv_sqrt[self._dst_local] * inv_sqrt[self._src_local]
        a[:, diag, diag] = 1.0 / self._deg_full
        a[:, self._dst_local, self._src_local] = base[None, :] * chunk
        return a

    def _eval_gcn(self, chunk: np.ndarray) -> np.ndarray:
        a = self._propagation_batch(chunk)
        layers = self.w.layers
        h = self._x_local  # (s, in); becomes (k, s, d) after the first layer
        for layer in layers[:-1]:
            h = np.maximum(a @ (h @ layer.weight) + layer.bias, 0.0)
        last = layers[-1]
        z = h @ last.weight
        center_rows = a[:, self._center_local, :]  # (k, s)
        if z.ndim == 2:  # single-layer model
            logits = center_rows @ z + last.bias
        else:
            logits = np.einsum("ks,kso->ko", center_rows, z) + last.bias
        return _softmax_rows(logits)

    def _gat_layer_batch(self, layer: GATLayer, x: np.ndarray, chunk: np.ndarray) -> np.ndarray:
        """Dense batched GAT layer over all local nodes.

        x: (s, in) shared across coalitions or (k, s, in). Returns (k, s, out).
        """
        k, s = chunk.shape[0], self._s
        diag = np.arange(s)
        incl = chunk > 0.0
        shared = x.ndim == 2
        head_outs = []
        for h in range(layer.heads):
            z = x @ layer.weight[h]  # (s, dh) or (k, s, dh)
            s_src = z @ layer.att_src[h]
            s_dst = z @ layer.att_dst[h]
            if shared:
                edge_logits = np.broadcast_to(
                    _leaky_relu(s_src[self._src_local] + s_dst[self._dst_local], layer.leaky_slope),
                    (k, self.n),
                )
                self_logits = np.broadcast_to(
                    _leaky_relu(s_src + s_dst, layer.leaky_slope), (k, s)
                )
            else:
                edge_logits = _leaky_relu(
                    s_src[:, self._src_local] + s_dst[:, self._dst_local], layer.leaky_slope
                )
                self_logits = _leaky_relu(s_src + s_dst, layer.leaky_slope)
            logits = np.full((k, s, s), -np.inf)
            logits[:, self._dst_local, self._src_local] = np.where(incl, edge_logits, -np.inf)
            logits[:, diag, diag] = self_logits
            row_max = logits.max(axis=2)
            ex = np.exp(logits - row_max[:, :, None])
            denom = ex.sum(axis=2)
            ex[:, self._dst_local, self._src_local] *= chunk
            alpha = ex / denom[:, :, None]
            head_outs.append(alpha @ z)
        if layer.merge == "concat":
            out = np.concatenate(head_outs, axis=2)
        else:
            out = np.mean(head_outs, axis=0)
        return out + layer.bias

    def _eval_gat(self, chunk: np.ndarray) -> np.ndarray:
        layers = self.w.layers
        x = self._x_local  # shared 2D until the first batched layer
        for layer in layers[:-1]:
            x = np.maximum(self._gat_layer_batch(layer, x, chunk), 0.0)
        logits = self._gat_center_row(layers[-1], x, chunk)
        return _softmax_rows(logits)

    def _gat_center_row(self, layer: GATLayer, x: np.ndarray, chunk: np.ndarray) -> np.ndarray:
        """Last-layer aggregation restricted to the center node. x: (s,in) or (k,s,in)."""
        k = chunk.shape[0]
        c = self._center_local
        into_center = self._dst_local == c
        e_src = self._src_local[into_center]  # local sources into the center
        e_cols = np.flatnonzero(into_center)  # player columns of those edges
        shared = x.ndim == 2
        head_outs = []
        for h in range(layer.heads):
            z = x @ layer.weight[h]  # (s, dh) or (k, s, dh)
            s_src = z @ layer.att_src[h]
            if shared:
                z = np.broadcast_to(z, (k,) + z.shape)
                s_src = np.broadcast_to(s_src, (k, self._s))
            s_dst_c = z[:, c, :] @ layer.att_dst[h]  # (k,)
            lg = _leaky_relu(s_src[:, e_src] + s_dst_c[:, None], layer.leaky_slope)
            lg_self = _leaky_relu(s_src[:, c] + s_dst_c, layer.leaky_slope)
            mvals = chunk[:, e_cols]
            lg = np.where(mvals > 0.0, lg, -np.inf)
            row_max = np.maximum(lg.max(axis=1, initial=-np.inf), lg_self)
            ex = np.exp(lg - row_max[:, None])
            ex_self = np.exp(lg_self - row_max)
            denom = ex.sum(axis=1) + ex_self
            ex = ex * mvals
            agg = np.einsum("ke,keo->ko", ex, z[:, e_src, :]) + ex_self[:, None] * z[:, c, :]
            head_outs.append(agg / denom[:, None])
        if layer.merge == "concat":
            out = np.concatenate(head_outs, axis=1)
        else:
            out = np.mean(head_outs, axis=0)
        return out + layer.bias


# ---------------------------------------------------------------------------
# MAC accounting

GAT_LOGIT_MACS_PER_HEAD_DIM = 2  # two attention dot products per edge endpoint pair


def count_macs(w: ModelWeights, num_nodes: int, num_edges: int) -> int:
    """Message-passing multiply-accumulates for one full inference.

    GCN: every kept edge plus every self-loop costs one MAC per output
    channel per layer: (M + N) * sum(out_dim).

    GAT: per edge (and self-loop), per layer, per head: head_dim MACs to
    scale-accumulate the message plus 2 * head_dim for the attention-logit
    dot products. This is this package's own cost model for attention;
    dense feature transforms are excluded in both cases.
    """
    w.validate()
    units = num_edges + num_nodes
    total = 0
    for layer in w.layers:
        if w.kind == "gcn":
            total += units * layer.out_dim
        else:
            per_edge = layer.heads * layer.head_dim * (1 + GAT_LOGIT_MACS_PER_HEAD_DIM)
            total += units * per_edge
    return int(total)


# ---------------------------------------------------------------------------
# Weights on disk: weights.json (architecture + tensor manifest) + weights.f32


def _tensor_entries(w: ModelWeights):
    for i, layer in enumerate(w.layers):
        if w.kind == "gcn":
            yield f"layers.{i}.weight", layer.weight
            yield f"layers.{i}.bias", layer.bias
        else:
            yield f"layers.{i}.weight", layer.weight
            yield f"layers.{i}.att_src", layer.att_src
            yield f"layers.{i}.att_dst", layer.att_dst
            yield f"layers.{i}.bias", layer.bias


def save_weights(w: ModelWeights, path) -> None:
    """Write weights.json + weights.f32 into a directory (atomic per file)."""
    w.validate()
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = []
    blobs = []
    offset = 0
    for name, arr in _tensor_entries(w):
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)
    arch: dict = {"format_version": FORMAT_VERSION, "kind": w.kind, "layers": [], "tensors": manifest}
    for layer in w.layers:
        if w.kind == "gcn":
            arch["layers"].append({"in_dim": layer.in_dim, "out_dim": layer.out_dim})
        else:
            arch["layers"].append(
                {
                    "in_dim": layer.in_dim,
                    "head_dim": layer.head_dim,
                    "heads": layer.heads,
                    "merge": layer.merge,
                    "leaky_slope": layer.leaky_slope,
                }
            )
    tmp_json = (json.dumps(arch, indent=2) + "\n").encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=root, prefix=WEIGHTS_JSON + ".")
    with os.fdopen(fd, "wb") as fh:
        fh.write(tmp_json)
    os.replace(tmp, root / WEIGHTS_JSON)
    fd, tmp = tempfile.mkstemp(dir=root, prefix=WEIGHTS_BIN + ".")
    with os.fdopen(fd, "wb") as fh:
        fh.write(b"".join(blobs))
    os.replace(tmp, root / WEIGHTS_BIN)


def _take(blob: np.ndarray, entry: dict, path: Path) -> np.ndarray:
    shape = tuple(entry["shape"])
    count = int(np.prod(shape)) if shape else 1
    start = entry["offset"] // 4
    if entry["offset"] % 4 != 0 or start + count > blob.size:
        raise EngineError(
            f"{path}: tensor {entry['name']!r} at byte offset {entry['offset']} "
            f"overruns the binary blob"
        )
    return blob[start : start + count].reshape(shape).astype(np.float64)


def load_weights(path) -> ModelWeights:
    """Load a weights directory written by save_weights or the exporter."""
    root = Path(path)
    json_path = root / WEIGHTS_JSON
    bin_path = root / WEIGHTS_BIN
    if not json_path.is_file():
        raise EngineError(f"missing file: {json_path}")
    if not bin_path.is_file():
        raise EngineError(f"missing file: {bin_path}")
    arch = json.loads(json_path.read_text("utf-8"))
    if arch.get("format_version") != FORMAT_VERSION:
        raise EngineError(f"{json_path}: unsupported format_version {arch.get('format_version')}")
    blob = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
    tensors = {e["name"]: _take(blob, e, bin_path) for e in arch["tensors"]}
    kind = arch["kind"]
    layers = []
    for i, spec in enumerate(arch["layers"]):
        if kind == "gcn":
            layers.append(GCNLayer(weight=tensors[f"layers.{i}.weight"], bias=tensors[f"layers.{i}.bias"]))
        else:
            layers.append(
                GATLayer(
                    weight=tensors[f"layers.{i}.weight"],
                    att_src=tensors[f"layers.{i}.att_src"],
                    att_dst=tensors[f"layers.{i}.att_dst"],
                    bias=tensors[f"layers.{i}.bias"],
                    merge=spec.get("merge", "concat"),
                    leaky_slope=float(spec.get("leaky_slope", 0.2)),
                )
            )
    w = ModelWeights(kind=kind, layers=tuple(layers))
    w.validate()
    return w
