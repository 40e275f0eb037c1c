"""Acceptance suite: every release-gating check in one module.

Each test covers one criterion, runs at its stated tolerance, and prints a
single PASS/FAIL line (visible with pytest -v -s or in captured output).
"""

import functools
import math

import numpy as np

from shapsparse import (
    GCNLayer,
    ModelWeights,
    aggregate,
    count_macs,
    exact_shapley,
    explain_all,
    fidelity,
    forward,
    full_graph_probs,
    keep_count,
    kernel_shapley,
    run_sweep,
    sparsify,
    write_explanations,
)
from shapsparse.cli import main as cli_main
from conftest import axiom_fixtures, gcn_weights, make_star
from oracles import shapley_subsets
from test_aggregate import scores_of


def _report(name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}"
    if detail:
        line += f"  ({detail})"
    print(line)
    assert ok, line


def _gcn(dims):
    return ModelWeights(
        kind="gcn",
        layers=tuple(
            GCNLayer(weight=np.zeros((dims[i], dims[i + 1])), bias=np.zeros(dims[i + 1]))
            for i in range(len(dims) - 1)
        ),
    )


def _truncate_thousands(x: int) -> int:
    return (x // 1000) * 1000


def test_mac_anchors():
    cora = _gcn((1433, 16, 7))
    pubmed = _gcn((500, 16, 3))
    cora_full = count_macs(cora, 2708, 10556)
    cora_pruned = count_macs(cora, 2708, 2111)
    pubmed_full = count_macs(pubmed, 19717, 88648)
    pubmed_pruned = count_macs(pubmed, 19717, keep_count(88648, 0.8))
    ok = (
        cora_full == 305_072
        and cora_pruned == 110_837
        and pubmed_full == 2_058_935
        and 711_000 <= pubmed_pruned < 712_000
        and _truncate_thousands(cora_full) == 305_000
        and _truncate_thousands(cora_pruned) == 110_000
        and _truncate_thousands(pubmed_full) == 2_058_000
        and _truncate_thousands(pubmed_pruned) == 711_000
    )
    _report(
        "MAC anchors",
        ok,
        f"cora {cora_full}/{cora_pruned}, pubmed {pubmed_full}/{pubmed_pruned}",
    )


def _memoized_game(g, w, v, target, players):
    @functools.lru_cache(maxsize=None)
    def value(frozen):
        mask = np.ones(g.num_edges)
        mask[players] = 0.0
        mask[[players[i] for i in frozen]] = 1.0
        return float(forward(g, w, mask, targets=[v])[v].probs[target])

    return lambda s: value(frozenset(s))


def test_shapley_axioms():
    fixtures = axiom_fixtures()
    assert len(fixtures) >= 5
    efficiency_ok = True
    dummy_ok = True
    symmetry_ok = True
    for name, g, w, v in fixtures:
        t = int(np.argmax(full_graph_probs(g, w)[v]))
        exp = exact_shapley(g, w, v, t)
        assert exp.edge_ids.size <= 12, name
        f_full = float(forward(g, w, np.ones(g.num_edges), targets=[v])[v].probs[t])
        efficiency_ok &= abs(exp.base + exp.values.sum() - f_full) <= 1e-6
        if name == "star_zero_spoke_gcn":
            dummy_ok &= abs(exp.values[4]) <= 1e-9
        if name == "star_identical_gcn":
            symmetry_ok &= float(np.ptp(exp.values)) <= 1e-9
    _report(
        "Shapley axioms (efficiency/dummy/symmetry)",
        efficiency_ok and dummy_ok and symmetry_ok,
        f"{len(fixtures)} fixtures",
    )


def test_oracle_equivalence():
    kernel_ok = True
    oracle_ok = True
    worst_kernel = 0.0
    worst_oracle = 0.0
    for name, g, w, v in axiom_fixtures():
        t = int(np.argmax(full_graph_probs(g, w)[v]))
        exp = exact_shapley(g, w, v, t)
        n = exp.edge_ids.size
        approx = kernel_shapley(g, w, v, t, k=2**n - 2, seed=0)
        kerr = float(np.abs(approx.values - exp.values).max())
        worst_kernel = max(worst_kernel, kerr)
        kernel_ok &= kerr <= 1e-5
        game = _memoized_game(g, w, v, t, list(exp.edge_ids))
        brute = shapley_subsets(game, n)
        oerr = float(np.abs(np.asarray(brute) - exp.values).max()) if n else 0.0
        worst_oracle = max(worst_oracle, oerr)
        oracle_ok &= oerr <= 1e-6
    _report(
        "Oracle equivalence (full-enumeration kernel + brute force)",
        kernel_ok and oracle_ok,
        f"max kernel err {worst_kernel:.2e}, max oracle err {worst_oracle:.2e}",
    )


def test_convergence_trend():
    g = make_star("distinct")
    w = gcn_weights((3, 4, 3), seed=3)
    t = int(np.argmax(full_graph_probs(g, w)[5]))
    exact = exact_shapley(g, w, 5, t)
    n = 5
    medians = []
    for k in (2 * n + 2, 4 * n, 16 * n, 64 * n):
        errs = [
            float(np.abs(kernel_shapley(g, w, 5, t, k=k, seed=s).values - exact.values).max())
            for s in range(20)
        ]
        medians.append(float(np.median(errs)))
    inversions = sum(1 for a, b in zip(medians, medians[1:]) if b > a + 1e-12)
    _report(
        "Convergence trend over k",
        inversions <= 1,
        "medians " + ", ".join(f"{m:.2e}" for m in medians),
    )


def test_planted_noise_sweep(planted, planted_exact_explanations):
    g, truth, w = planted
    assert truth.noise_fraction >= 0.30
    signed = aggregate(planted_exact_explanations, g.num_edges, "mean")
    folded = aggregate(planted_exact_explanations, g.num_edges, "mean", abs_transform=True)

    mean_noise = float(signed.scores[truth.is_noise].mean())
    mean_signal = float(signed.scores[~truth.is_noise].mean())
    cond_a = mean_noise < mean_signal

    taus = [0.0, 0.3, 0.5]
    acc_signed = {r.tau: r.test_accuracy for r in run_sweep(g, w, signed, taus).rows}
    acc_abs = {r.tau: r.test_accuracy for r in run_sweep(g, w, folded, taus).rows}
    cond_b = acc_signed[0.3] >= acc_signed[0.0] - 0.02
    cond_c = (
        acc_signed[0.3] >= acc_abs[0.3]
        and acc_signed[0.5] >= acc_abs[0.5]
        and (acc_signed[0.3] > acc_abs[0.3] or acc_signed[0.5] > acc_abs[0.5])
    )
    _report(
        "Planted-noise sweep (score separation, retention, signed beats abs)",
        cond_a and cond_b and cond_c,
        f"noise {mean_noise:+.4f} vs signal {mean_signal:+.4f}; "
        f"acc signed {acc_signed[0.0]:.3f}/{acc_signed[0.3]:.3f}/{acc_signed[0.5]:.3f}; "
        f"abs {acc_abs[0.3]:.3f}/{acc_abs[0.5]:.3f}",
    )


def test_fidelity_ordering(planted, planted_exact_explanations):
    g, _, w = planted
    signed = aggregate(planted_exact_explanations, g.num_edges, "mean")
    fid_plus = fidelity(g, w, signed, 0.1, "plus")
    fid_minus = fidelity(g, w, signed, 0.1, "minus")
    cond_exact = fid_plus > fid_minus

    diffs = []
    for seed in range(50):
        exps, fails = explain_all(g, w, "random", seed=seed)
        assert not fails
        sc = aggregate(exps, g.num_edges, "mean")
        diffs.append(fidelity(g, w, sc, 0.1, "plus") - fidelity(g, w, sc, 0.1, "minus"))
    diffs = np.asarray(diffs)
    mean = float(diffs.mean())
    # two-sided 95% t interval for 49 degrees of freedom
    half_width = 2.0096 * float(diffs.std(ddof=1)) / math.sqrt(len(diffs))
    cond_random = abs(mean) <= half_width
    _report(
        "Fidelity ordering (exact separates, random does not)",
        cond_exact and cond_random,
        f"exact fid+={fid_plus:+.4f} fid-={fid_minus:+.4f}; "
        f"random diff {mean:+.5f} within ±{half_width:.5f}",
    )


def test_pipeline_determinism_and_pruning_contract(
    planted, planted_exact_explanations, tmp_path
):
    g, _, w = planted
    signed = aggregate(planted_exact_explanations, g.num_edges, "mean")

    # tau nesting over the whole grid
    taus = [round(0.1 * i, 1) for i in range(10)]
    kept_sets = [set(sparsify(g, signed, t).kept.tolist()) for t in taus]
    nesting_ok = all(b <= a for a, b in zip(kept_sets, kept_sets[1:]))

    # tie-breaking and ceil keep-count on the documented example
    star = make_star("distinct")
    sp = sparsify(star, scores_of([5.0, -1.0, 3.0, 3.0, 0.0]), 0.4)
    ties_ok = list(sp.kept) == [0, 2, 3]
    ceil_ok = keep_count(10, 0.55) == 5 and keep_count(10556, 0.8) == 2112

    # 1 vs N workers
    blobs = []
    for i, workers in enumerate((1, 4)):
        exps, fails = explain_all(g, w, "kernel", k=48, seed=3, workers=workers)
        assert not fails
        path = tmp_path / f"workers{i}.jsonl"
        write_explanations(path, exps)
        blobs.append(path.read_bytes())
    workers_ok = blobs[0] == blobs[1]

    # byte-identical repeat CLI runs (same out dir, rewritten in place)
    from shapsparse import save_weights
    from conftest import PLANTED_PARAMS, PLANTED_SEED

    bundle_dir = tmp_path / "bundle"
    weights_dir = tmp_path / "weights"
    assert cli_main([
        "gen-synth", "--out", str(bundle_dir), "--seed", str(PLANTED_SEED),
        "--p-in", str(PLANTED_PARAMS.p_in), "--p-out", str(PLANTED_PARAMS.p_out),
    ]) == 0
    save_weights(w, weights_dir)
    out = tmp_path / "sweep"
    args = [
        "sweep", "--bundle", str(bundle_dir), "--weights", str(weights_dir),
        "--out", str(out), "--explainer", "kernel", "--k", "48", "--seed", "3",
        "--taus", "0,0.3",
    ]
    assert cli_main(args) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert cli_main(args) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    repeat_ok = first == second

    _report(
        "Pipeline determinism and pruning contract",
        nesting_ok and ties_ok and ceil_ok and workers_ok and repeat_ok,
        f"nesting={nesting_ok} ties={ties_ok} ceil={ceil_ok} "
        f"workers={workers_ok} repeat={repeat_ok}",
    )
