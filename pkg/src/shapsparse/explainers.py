"""Per-node signed edge attribution.

Players are the directed edges of the explained node's computational graph,
in ascending edge-id order. The value of a coalition is the model's
probability for the target class at that node, with the coalition's players
kept and the remaining players masked to zero; edges outside the
computational graph stay untouched.

Four scorers are provided: exact enumeration, a kernel-weighted linear
surrogate fit on sampled coalitions, a central-finite-difference saliency
baseline, and a uniform random control.
"""

from __future__ import annotations

import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import comb

from .bundle import GraphBundle, atomic_write, extract_computational_graph
from .engine import CoalitionEvaluator, ModelWeights, full_graph_probs


class TooManyPlayers(ValueError):
    """Exact enumeration refused; caller should fall back to sampling."""


class TooFewSamples(ValueError):
    """Sample budget below the identifiable minimum for the surrogate fit."""


@dataclass(frozen=True)
class PlayerSet:
    """Edges eligible for attribution at one node."""

    center: int
    players: np.ndarray  # ascending edge ids

    @property
    def n(self) -> int:
        return int(self.players.size)


def players_of(g: GraphBundle, w: ModelWeights, v: int) -> PlayerSet:
    cg = extract_computational_graph(g, v, len(w.layers))
    return PlayerSet(center=int(v), players=cg.edge_ids)


@dataclass(frozen=True)
class Explanation:
    """Signed per-edge scores for one node and target class."""

    node: int
    target: int
    base: float  # value of the empty coalition (0 for baselines)
    edge_ids: np.ndarray  # ascending
    values: np.ndarray
    method: str
    samples_used: int
    regularized: bool = False

    def as_dict(self) -> dict[int, float]:
        return {int(e): float(s) for e, s in zip(self.edge_ids, self.values)}

    def to_json_obj(self) -> dict:
        obj = {
            "node": self.node,
            "target": self.target,
            "base": self.base,
            "method": self.method,
            "k": self.samples_used,
            "scores": [[int(e), float(s)] for e, s in zip(self.edge_ids, self.values)],
        }
        if self.regularized:
            obj["regularized"] = True
        return obj

    @staticmethod
    def from_json_obj(obj: dict) -> "Explanation":
        pairs = obj.get("scores", [])
        ids = np.array([p[0] for p in pairs], dtype=np.int64)
        vals = np.array([p[1] for p in pairs], dtype=np.float64)
        return Explanation(
            node=int(obj["node"]),
            target=int(obj["target"]),
            base=float(obj["base"]),
            edge_ids=ids,
            values=vals,
            method=str(obj["method"]),
            samples_used=int(obj["k"]),
            regularized=bool(obj.get("regularized", False)),
        )


def _bit_matrix(codes: np.ndarray, n: int) -> np.ndarray:
    """(len(codes), n) uint8 coalition masks from integer bit codes."""
    return ((codes[:, None] >> np.arange(n, dtype=codes.dtype)) & 1).astype(np.uint8)


def default_sample_count(n: int) -> int:
    """Coalition budget when the caller does not pin one: enumerate small
    player sets, otherwise scale with n."""
    return min(2**n - 2, 2048 * math.ceil(n / 64))


def kernel_weight(n: int, size: int) -> float:
    """Least-squares weight of one coalition of the given size."""
    if not 0 < size < n:
        raise ValueError("kernel weight defined for proper non-empty coalitions only")
    return (n - 1) / (comb(n, size, exact=True) * size * (n - size))


def exact_shapley(
    g: GraphBundle,
    w: ModelWeights,
    v: int,
    target: int | None = None,
    *,
    n_limit: int = 20,
    renormalize_per_mask: bool = False,
) -> Explanation:
    """Exact attribution by full 2^n coalition enumeration."""
    ev = CoalitionEvaluator(g, w, v, renormalize_per_mask=renormalize_per_mask)
    n = ev.n
    if n > n_limit:
        raise TooManyPlayers(f"node {v} has {n} players, exceeding the limit {n_limit}")
    if target is None:
        target = int(np.argmax(full_graph_probs(g, w)[v]))
    codes = np.arange(2**n, dtype=np.uint32)
    masks = _bit_matrix(codes, n)
    f = ev.evaluate_class(masks, target)
    size_w = np.array([1.0 / (n * comb(n - 1, s, exact=True)) for s in range(n)]) if n else np.zeros(0)
    popcount = masks.sum(axis=1).astype(np.int64)
    phi = np.zeros(n)
    for i in range(n):
        without = codes[(codes >> np.uint32(i)) & 1 == 0]
        phi[i] = np.sum(size_w[popcount[without]] * (f[without | np.uint32(1 << i)] - f[without]))
    return Explanation(
        node=int(v),
        target=int(target),
        base=float(f[0]),
        edge_ids=ev.players.copy(),
        values=phi,
        method="exact",
        samples_used=int(codes.size),
    )


def _pair_strata(n: int) -> list[tuple[int, ...]]:
    """Coalition sizes grouped with their complements: (1, n-1), (2, n-2), ..."""
    groups: list[tuple[int, ...]] = []
    for s in range(1, n // 2 + 1):
        groups.append((s,) if s == n - s else (s, n - s))
    return groups


def _sample_coalitions(n: int, budget: int, rng: np.random.Generator):
    """Stratified-by-size, complement-paired coalition draws.

    Returns (mask_rows uint8, weights float64). Strata whose expected share
    of the budget covers full enumeration are enumerated exactly at their
    analytic kernel weight; the rest is sampled and reweighted so each
    size's total mass is preserved.
    """
    groups = _pair_strata(n)
    mass = {s: (n - 1) / (s * (n - s)) for s in range(1, n)}
    rows: list[np.ndarray] = []
    weights: list[float] = []
    mass_rem = sum(mass.values())
    budget_rem = budget
    sample_groups: list[tuple[int, ...]] = []
    for group in groups:
        group_mass = sum(mass[s] for s in group)
        capacity = sum(comb(n, s, exact=True) for s in group)
        if mass_rem > 0 and budget_rem * group_mass / mass_rem >= capacity - 1e-9:
            for s in group:
                for combo in itertools.combinations(range(n), s):
                    row = np.zeros(n, dtype=np.uint8)
                    row[list(combo)] = 1
                    rows.append(row)
                    weights.append(kernel_weight(n, s))
            budget_rem -= capacity
            mass_rem -= group_mass
        else:
            sample_groups.append(group)

    if sample_groups and budget_rem > 0:
        group_mass = np.array([sum(mass[s] for s in grp) for grp in sample_groups])
        probs = group_mass / group_mass.sum()
        seen: dict[bytes, int] = {}
        sampled_rows: list[np.ndarray] = []
        counts: list[float] = []
        draws = 0
        while draws < budget_rem:
            grp = sample_groups[int(rng.choice(len(sample_groups), p=probs))]
            s = grp[0]
            members = rng.choice(n, size=s, replace=False)
            row = np.zeros(n, dtype=np.uint8)
            row[members] = 1
            for candidate in (row, 1 - row):
                if draws >= budget_rem:
                    break
                key = candidate.tobytes()
                if key in seen:
                    counts[seen[key]] += 1.0
                else:
                    seen[key] = len(sampled_rows)
                    sampled_rows.append(candidate)
                    counts.append(1.0)
                draws += 1
        scale = mass_rem / draws
        rows.extend(sampled_rows)
        weights.extend(c * scale for c in counts)

    if rows:
        return np.stack(rows), np.array(weights)
    return np.zeros((0, n), dtype=np.uint8), np.zeros(0)


def kernel_shapley(
    g: GraphBundle,
    w: ModelWeights,
    v: int,
    target: int | None = None,
    *,
    k: int | None = None,
    seed: int = 0,
    renormalize_per_mask: bool = False,
) -> Explanation:
    """Shapley approximation by kernel-weighted least squares.

    Fits g(m) = base + sum_i phi_i m_i over sampled coalitions; the empty
    and full coalitions are enforced exactly by constraint elimination.
    With k >= 2^n - 2 every proper coalition is enumerated and the result
    matches exact enumeration up to solver tolerance.
    """
    ev = CoalitionEvaluator(g, w, v, renormalize_per_mask=renormalize_per_mask)
    n = ev.n
    if n < 1:
        raise ValueError(f"node {v} has no players")
    if target is None:
        target = int(np.argmax(full_graph_probs(g, w)[v]))
    if k is None:
        k = default_sample_count(n)
    min_k = min(2 * n + 2, 2**n - 2)
    if k < min_k:
        raise TooFewSamples(f"k={k} below the minimum {min_k} for n={n}")

    endpoints = np.concatenate([np.zeros((1, n), dtype=np.uint8), np.ones((1, n), dtype=np.uint8)])
    f_ends = ev.evaluate_class(endpoints, target)
    f0, f_full = float(f_ends[0]), float(f_ends[1])

    if n == 1:
        return Explanation(
            node=int(v), target=int(target), base=f0,
            edge_ids=ev.players.copy(), values=np.array([f_full - f0]),
            method="kernel", samples_used=2,
        )

    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(v)]))
    total_proper = 2**n - 2
    if k >= total_proper:
        codes = np.arange(1, 2**n - 1, dtype=np.uint32)
        masks = _bit_matrix(codes, n)
        sizes = masks.sum(axis=1)
        weights = np.array([kernel_weight(n, int(s)) for s in sizes])
    else:
        masks, weights = _sample_coalitions(n, k, rng)

    f_vals = ev.evaluate_class(masks, target)
    m = masks.astype(np.float64)
    y = f_vals - f0 - m[:, -1] * (f_full - f0)
    x = m[:, :-1] - m[:, -1:]
    a = x.T @ (x * weights[:, None])
    b = x.T @ (weights * y)
    regularized = False
    try:
        phi_free = np.linalg.solve(a, b)
        if not np.all(np.isfinite(phi_free)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        phi_free = np.linalg.solve(a + 1e-8 * np.eye(n - 1), b)
        regularized = True
    phi = np.concatenate([phi_free, [(f_full - f0) - phi_free.sum()]])
    return Explanation(
        node=int(v), target=int(target), base=f0,
        edge_ids=ev.players.copy(), values=phi,
        method="kernel", samples_used=int(masks.shape[0]) + 2,
        regularized=regularized,
    )


def saliency_baseline(
    g: GraphBundle,
    w: ModelWeights,
    v: int,
    target: int | None = None,
    *,
    h: float = 1e-3,
    renormalize_per_mask: bool = False,
) -> Explanation:
    """|central finite difference| of the target probability per edge mask."""
    if h <= 0:
        raise ValueError("step h must be > 0")
    ev = CoalitionEvaluator(g, w, v, renormalize_per_mask=renormalize_per_mask)
    n = ev.n
    if target is None:
        target = int(np.argmax(full_graph_probs(g, w)[v]))
    masks = np.ones((2 * n, n))
    idx = np.arange(n)
    masks[2 * idx, idx] = 1.0 + h
    masks[2 * idx + 1, idx] = 1.0 - h
    f = ev.evaluate_class(masks, target) if n else np.zeros(0)
    scores = np.abs(f[0::2] - f[1::2]) / (2.0 * h)
    return Explanation(
        node=int(v), target=int(target), base=0.0,
        edge_ids=ev.players.copy(), values=scores,
        method="saliency", samples_used=2 * n,
    )


def random_baseline(
    g: GraphBundle, w: ModelWeights, v: int, seed: int = 0, target: int | None = None
) -> Explanation:
    """Uniform [0, 1) score per player; seeded control baseline."""
    ps = players_of(g, w, v)
    if target is None:
        target = int(np.argmax(full_graph_probs(g, w)[v]))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(v)]))
    return Explanation(
        node=int(v), target=int(target), base=0.0,
        edge_ids=ps.players.copy(), values=rng.random(ps.n),
        method="random", samples_used=0,
    )


METHODS = ("exact", "kernel", "saliency", "random")


def explain_all(
    g: GraphBundle,
    w: ModelWeights,
    method: str = "kernel",
    *,
    nodes=None,
    k: int | None = None,
    seed: int = 0,
    h: float = 1e-3,
    n_limit: int = 20,
    renormalize_per_mask: bool = False,
    workers: int = 1,
) -> tuple[list[Explanation], list[dict]]:
    """Explain every selected node for its full-graph predicted class.

    nodes: iterable of node indices or None for all nodes. Nodes without
    players are skipped silently; per-node errors become failure records
    and do not abort the run. Output order is node-index order regardless
    of worker scheduling.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    w.check_compatible(g)
    predicted = np.argmax(full_graph_probs(g, w), axis=1)
    todo = sorted(int(v) for v in (range(g.num_nodes) if nodes is None else nodes))
    layer_count = len(w.layers)

    def one(v: int):
        if extract_computational_graph(g, v, layer_count).edge_ids.size == 0:
            return None
        t = int(predicted[v])
        if method == "exact":
            return exact_shapley(g, w, v, t, n_limit=n_limit,
                                 renormalize_per_mask=renormalize_per_mask)
        if method == "kernel":
            return kernel_shapley(g, w, v, t, k=k, seed=seed,
                                  renormalize_per_mask=renormalize_per_mask)
        if method == "saliency":
            return saliency_baseline(g, w, v, t, h=h,
                                     renormalize_per_mask=renormalize_per_mask)
        return random_baseline(g, w, v, seed, t)

    explanations: list[Explanation] = []
    failures: list[dict] = []
    if workers <= 1:
        results = [(v, _call_safe(one, v)) for v in todo]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outs = pool.map(lambda v: (v, _call_safe(one, v)), todo)
            results = list(outs)
    for v, (ok, value) in results:
        if not ok:
            failures.append({"node": v, "error": value})
        elif value is not None:
            explanations.append(value)
    return explanations, failures


def _call_safe(fn, v):
    try:
        return True, fn(v)
    except Exception as exc:  # per-node failure record, run continues
        return False, f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------------------
# JSONL store


def write_explanations(path, explanations, failures=()) -> None:
    """One JSON object per line: explanations in node order, then failures."""
    lines = [json.dumps(e.to_json_obj()) for e in explanations]
    lines += [json.dumps({"node": f["node"], "error": f["error"]}) for f in failures]
    atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))


def read_explanations(path) -> tuple[list[Explanation], list[dict]]:
    explanations, failures = [], []
    for line in Path(path).read_text("utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "error" in obj:
            failures.append(obj)
        else:
            explanations.append(Explanation.from_json_obj(obj))
    return explanations, failures
