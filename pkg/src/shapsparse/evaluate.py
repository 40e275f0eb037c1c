"""Accuracy, fidelity, MAC reporting, and sparsity sweeps.

Pruned graphs are evaluated the way they would be deployed: the kept edges
are materialized into a fresh bundle and inference renormalizes on it.
Fidelity compares the model's confidence in each test node's full-graph
predicted class before and after removing the top (plus) or bottom (minus)
fraction of edges by global score.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bundle import GraphBundle, atomic_write
from .engine import ModelWeights, count_macs, full_graph_probs
from .sparsify import (
    GlobalEdgeScores,
    SparsifiedGraph,
    ascending_order,
    descending_order,
    keep_count,
    materialize,
)

REPORT_COLUMNS = ("tau", "kept_edges", "test_accuracy", "fidelity_plus", "fidelity_minus", "macs")


def test_accuracy(g: GraphBundle, w: ModelWeights, pruned: GraphBundle | SparsifiedGraph | None = None) -> float:
    """Fraction of test nodes classified correctly on the (pruned) graph."""
    target_graph = g if pruned is None else pruned
    if isinstance(target_graph, SparsifiedGraph):
        target_graph = materialize(target_graph)
    test_nodes = np.flatnonzero(g.test_mask)
    if test_nodes.size == 0:
        raise ValueError("test mask is empty")
    predicted = np.argmax(full_graph_probs(target_graph, w), axis=1)
    return float(np.mean(predicted[test_nodes] == g.labels[test_nodes]))


def _pruned_bundle(g: GraphBundle, drop_ids: np.ndarray) -> GraphBundle:
    keep = np.ones(g.num_edges, dtype=bool)
    keep[drop_ids] = False
    sp = SparsifiedGraph(parent=g, kept=np.flatnonzero(keep).astype(np.int64), tau=0.0)
    return materialize(sp)


def fidelity(
    g: GraphBundle,
    w: ModelWeights,
    scores: GlobalEdgeScores,
    fraction: float = 0.1,
    sign: str = "plus",
) -> float:
    """Mean drop of the predicted-class probability over test nodes.

    sign 'plus' removes the top floor(fraction * M) edges by global score;
    'minus' removes the bottom ones. Large plus means the scores found the
    edges that matter; minus near zero means the pruned tail was inert.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if sign not in ("plus", "minus"):
        raise ValueError(f"sign must be 'plus' or 'minus', got {sign!r}")
    return _fidelity_unchecked(g, w, scores, fraction, sign)


def _fidelity_unchecked(g, w, scores, fraction, sign) -> float:
    count = math.floor(fraction * g.num_edges)
    if count == 0:
        return 0.0
    order = descending_order(scores.scores) if sign == "plus" else ascending_order(scores.scores)
    pruned = _pruned_bundle(g, order[:count])
    test_nodes = np.flatnonzero(g.test_mask)
    if test_nodes.size == 0:
        raise ValueError("test mask is empty")
    p_full = full_graph_probs(g, w)
    p_cut = full_graph_probs(pruned, w)
    targets = np.argmax(p_full, axis=1)[test_nodes]
    return float(np.mean(p_full[test_nodes, targets] - p_cut[test_nodes, targets]))


@dataclass(frozen=True)
class SweepRow:
    tau: float
    kept_edges: int
    test_accuracy: float
    fidelity_plus: float
    fidelity_minus: float
    macs: int

    def as_dict(self) -> dict:
        return {
            "tau": self.tau,
            "kept_edges": self.kept_edges,
            "test_accuracy": self.test_accuracy,
            "fidelity_plus": self.fidelity_plus,
            "fidelity_minus": self.fidelity_minus,
            "macs": self.macs,
        }


@dataclass(frozen=True)
class SweepReport:
    rows: tuple
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        taus = [r.tau for r in self.rows]
        if taus != sorted(taus):
            raise ValueError("sweep rows must be sorted by tau")
        kept = [r.kept_edges for r in self.rows]
        macs = [r.macs for r in self.rows]
        if any(a < b for a, b in zip(kept, kept[1:])):
            raise ValueError("kept_edges must be non-increasing in tau")
        if any(a < b for a, b in zip(macs, macs[1:])):
            raise ValueError("macs must be non-increasing in tau")


def run_sweep(
    g: GraphBundle,
    w: ModelWeights,
    scores: GlobalEdgeScores,
    taus,
    *,
    fidelity_fraction: float = 0.1,
    metadata: dict | None = None,
) -> SweepReport:
    """Evaluate accuracy, fidelity, and MACs at every sparsity level.

    Edges are ranked once; every tau reuses the same order. Fidelity is a
    property of the scores, not of tau, so it is computed once at
    fidelity_fraction and echoed into each row.
    """
    taus = [float(t) for t in taus]
    if taus != sorted(taus):
        raise ValueError("taus must be sorted ascending")
    if any(not 0.0 <= t < 1.0 for t in taus):
        raise ValueError("every tau must lie in [0, 1)")
    order = descending_order(scores.scores)
    fid_plus = (
        _fidelity_unchecked(g, w, scores, fidelity_fraction, "plus") if fidelity_fraction > 0 else 0.0
    )
    fid_minus = (
        _fidelity_unchecked(g, w, scores, fidelity_fraction, "minus") if fidelity_fraction > 0 else 0.0
    )
    rows = []
    for tau in taus:
        kept = np.sort(order[: keep_count(g.num_edges, tau)])
        sp = SparsifiedGraph(parent=g, kept=kept, tau=tau)
        acc = test_accuracy(g, w, sp)
        rows.append(
            SweepRow(
                tau=tau,
                kept_edges=int(kept.size),
                test_accuracy=acc,
                fidelity_plus=fid_plus,
                fidelity_minus=fid_minus,
                macs=count_macs(w, g.num_nodes, int(kept.size)),
            )
        )
    report = SweepReport(rows=tuple(rows), metadata=dict(metadata or {}))
    report.validate()
    return report


# ---------------------------------------------------------------------------
# Report files


def write_report_csv(report: SweepReport, path) -> None:
    """Fixed-header CSV; floats rounded to 6 decimals for stable diffs."""
    lines = [",".join(REPORT_COLUMNS)]
    for r in report.rows:
        lines.append(
            f"{r.tau:.6f},{r.kept_edges},{r.test_accuracy:.6f},"
            f"{r.fidelity_plus:.6f},{r.fidelity_minus:.6f},{r.macs}"
        )
    atomic_write(path, ("\n".join(lines) + "\n").encode("utf-8"))


def write_report_json(report: SweepReport, path) -> None:
    obj = {"metadata": report.metadata, "rows": [r.as_dict() for r in report.rows]}
    atomic_write(path, (json.dumps(obj, indent=2) + "\n").encode("utf-8"))


def write_curve_svg(report: SweepReport, path) -> None:
    """Accuracy-vs-tau line plot; output bytes are deterministic."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    taus = [r.tau for r in report.rows]
    accs = [r.test_accuracy for r in report.rows]
    with plt.rc_context({"svg.hashsalt": "shapsparse"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(taus, accs, marker="o")
        ax.set_xlabel("sparsity tau")
        ax.set_ylabel("test accuracy")
        ax.set_ylim(0.0, 1.05)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        import io as _io

        buf = _io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    atomic_write(path, buf.getvalue())
