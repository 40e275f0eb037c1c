"""Fold local explanations into global edge scores and prune by rank.

Global scores stay signed: strongly negative edges sort last and are pruned
first, which is the whole point of signed attribution. Edges never covered
by any explanation carry a NaN sentinel (never a silent 0) and rank below
every scored edge.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bundle import GraphBundle, atomic_write, edge_endpoints

AGGREGATION_MODES = ("mean", "sum", "weighted_mean")


@dataclass(frozen=True)
class GlobalEdgeScores:
    """One signed score per directed edge of the full graph.

    scores[e] is NaN when no explained node's player set contains e;
    contributors[e] counts the explanations that covered e.
    """

    scores: np.ndarray  # float64, NaN = unscored
    contributors: np.ndarray  # int64
    aggregation: str
    abs_transform: bool

    @property
    def num_edges(self) -> int:
        return int(self.scores.size)

    @property
    def scored(self) -> np.ndarray:
        return self.contributors > 0


def aggregate(
    explanations,
    num_edges: int,
    mode: str = "mean",
    abs_transform: bool = False,
    prediction_probs=None,
) -> GlobalEdgeScores:
    """Combine per-node scores into one global score per edge.

    mode 'mean' averages over covering nodes, 'sum' adds, 'weighted_mean'
    weights each node by prediction_probs[node] (the model's confidence in
    that node's predicted class on the full graph). abs_transform replaces
    each local score by its absolute value before folding.
    """
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    if mode == "weighted_mean" and prediction_probs is None:
        raise ValueError("weighted_mean requires prediction_probs")
    sums = np.zeros(num_edges)
    wsums = np.zeros(num_edges)
    counts = np.zeros(num_edges, dtype=np.int64)
    for exp in explanations:
        ids = np.asarray(exp.edge_ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= num_edges):
            bad = ids[(ids < 0) | (ids >= num_edges)][0]
            raise ValueError(f"edge id {bad} out of range [0, {num_edges})")
        vals = np.abs(exp.values) if abs_transform else np.asarray(exp.values, dtype=np.float64)
        if mode == "weighted_mean":
            pv = float(prediction_probs[exp.node])
            np.add.at(sums, ids, pv * vals)
            np.add.at(wsums, ids, pv)
        else:
            np.add.at(sums, ids, vals)
        np.add.at(counts, ids, 1)

    scores = np.full(num_edges, np.nan)
    covered = counts > 0
    if mode == "mean":
        scores[covered] = sums[covered] / counts[covered]
    elif mode == "sum":
        scores[covered] = sums[covered]
    else:
        zero_w = covered & (wsums <= 0.0)
        if zero_w.any():
            raise ValueError(f"edge {int(np.flatnonzero(zero_w)[0])} has zero total weight")
        scores[covered] = sums[covered] / wsums[covered]
    return GlobalEdgeScores(
        scores=scores, contributors=counts, aggregation=mode, abs_transform=abs_transform
    )


def descending_order(scores: np.ndarray) -> np.ndarray:
    """Edge ids from most to least important.

    Higher score first; ties by ascending edge id; unscored (NaN) edges
    after every scored edge, ties among them by ascending edge id too.
    """
    scores = np.asarray(scores, dtype=np.float64)
    unscored = np.isnan(scores)
    filled = np.where(unscored, 0.0, scores)
    ids = np.arange(scores.size, dtype=np.int64)
    return np.lexsort((ids, -filled, unscored.astype(np.int64)))


def ascending_order(scores: np.ndarray) -> np.ndarray:
    """Edge ids from least to most important; unscored edges first."""
    scores = np.asarray(scores, dtype=np.float64)
    unscored = np.isnan(scores)
    filled = np.where(unscored, 0.0, scores)
    ids = np.arange(scores.size, dtype=np.int64)
    return np.lexsort((ids, filled, ~unscored))


def keep_count(num_edges: int, tau: float) -> int:
    """Edges retained at sparsity tau (ceiling, never fewer than the target)."""
    return max(0, math.ceil((1.0 - tau) * num_edges))


@dataclass(frozen=True)
class SparsifiedGraph:
    parent: GraphBundle
    kept: np.ndarray  # sorted edge ids
    tau: float


def sparsify(g: GraphBundle, scores: GlobalEdgeScores, tau: float) -> SparsifiedGraph:
    """Keep the top ceil((1 - tau) * M) edges by global score."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"tau must lie in [0, 1), got {tau}")
    if scores.num_edges != g.num_edges:
        raise ValueError("score vector length does not match the graph")
    order = descending_order(scores.scores)
    kept = np.sort(order[: keep_count(g.num_edges, tau)])
    return SparsifiedGraph(parent=g, kept=kept, tau=float(tau))


def materialize(sp: SparsifiedGraph) -> GraphBundle:
    """Emit a canonical bundle containing only the kept edges."""
    g = sp.parent
    src, dst = edge_endpoints(g, sp.kept)  # kept ids ascending = canonical order
    offsets = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=g.num_nodes), out=offsets[1:])
    out = GraphBundle(
        num_nodes=g.num_nodes,
        num_edges=int(sp.kept.size),
        csr_offsets=offsets,
        csr_targets=dst.astype(np.int64),
        features=g.features,
        labels=g.labels,
        train_mask=g.train_mask,
        val_mask=g.val_mask,
        test_mask=g.test_mask,
        num_classes=g.num_classes,
    )
    out.validate()
    return out


# ---------------------------------------------------------------------------
# On-disk formats: scores.csv and kept.u32

SCORES_HEADER = ["edge_id", "src", "dst", "score", "contributors"]


def write_scores_csv(path, g: GraphBundle, scores: GlobalEdgeScores) -> None:
    """CSV with one row per edge; unscored edges get an empty score field.

    Scores are written with round-trip precision so re-reading reproduces
    the exact ranking.
    """
    src, dst = edge_endpoints(g, np.arange(g.num_edges))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCORES_HEADER)
    for e in range(g.num_edges):
        val = "" if not scores.scored[e] else repr(float(scores.scores[e]))
        writer.writerow([e, int(src[e]), int(dst[e]), val, int(scores.contributors[e])])
    atomic_write(path, buf.getvalue().encode("utf-8"))


def read_scores_csv(path, aggregation: str = "mean", abs_transform: bool = False) -> GlobalEdgeScores:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != SCORES_HEADER:
        raise ValueError(f"{path}: unexpected header {rows[0] if rows else 'missing'}")
    body = rows[1:]
    scores = np.full(len(body), np.nan)
    contributors = np.zeros(len(body), dtype=np.int64)
    for row in body:
        e = int(row[0])
        if row[3] != "":
            scores[e] = float(row[3])
        contributors[e] = int(row[4])
    return GlobalEdgeScores(
        scores=scores, contributors=contributors,
        aggregation=aggregation, abs_transform=abs_transform,
    )


def write_kept(path, kept: np.ndarray) -> None:
    atomic_write(path, np.asarray(kept, dtype="<u4").tobytes())


def read_kept(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<u4").astype(np.int64)
