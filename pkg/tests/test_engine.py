import math

import numpy as np
import pytest

from shapsparse import (
    CoalitionEvaluator,
    EngineError,
    GCNLayer,
    ModelWeights,
    SparsifiedGraph,
    count_macs,
    forward,
    full_graph_probs,
    load_weights,
    materialize,
    save_weights,
)
from conftest import (
    gat_weights,
    gcn_weights,
    make_bundle,
    make_small_random,
    make_star,
)
from oracles import gcn_two_node_by_hand

# Frozen output of tests/oracles.py:gcn_two_node_by_hand (pure-Python script).
TWO_NODE_PROBS_0 = (0.665410558746814, 0.33458944125318596)
TWO_NODE_PROBS_1 = (0.7038246665623108, 0.2961753334376892)


def two_node_fixture():
    g = make_bundle(
        2, [(0, 1)], np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32), 2, labels=[0, 1]
    )
    w = ModelWeights(
        kind="gcn",
        layers=(
            GCNLayer(weight=np.array([[0.5, -0.25], [0.25, 0.5]]), bias=np.array([0.125, -0.125])),
            GCNLayer(weight=np.array([[1.0, -0.5], [-0.5, 1.0]]), bias=np.array([0.0, 0.25])),
        ),
    )
    return g, w


def test_two_node_hand_fixture():
    g, w = two_node_fixture()
    preds = forward(g, w)
    assert np.allclose(preds[0].probs, TWO_NODE_PROBS_0, atol=1e-12)
    assert np.allclose(preds[1].probs, TWO_NODE_PROBS_1, atol=1e-12)
    # the frozen values still agree with the oracle script itself
    p0, p1 = gcn_two_node_by_hand()
    assert np.allclose(p0, TWO_NODE_PROBS_0) and np.allclose(p1, TWO_NODE_PROBS_1)


def test_single_node_closed_form():
    x = np.array([[0.3, -0.7]], dtype=np.float32)
    g = make_bundle(1, [], x, 2)
    w1 = np.array([[1.0, 0.5], [0.0, 1.0]])
    w2 = np.array([[2.0, 0.0], [0.0, 2.0]])
    w = ModelWeights(
        kind="gcn",
        layers=(GCNLayer(weight=w1, bias=np.zeros(2)), GCNLayer(weight=w2, bias=np.zeros(2))),
    )
    logits = np.maximum(x.astype(np.float64) @ w1, 0.0) @ w2
    expected = np.exp(logits - logits.max()) / np.exp(logits - logits.max()).sum()
    assert np.allclose(forward(g, w)[0].probs, expected[0], atol=1e-12)


def test_identity_mask_bit_identical():
    g = make_star()
    for w in (gcn_weights((3, 4, 3), seed=3), gat_weights(3, 3, 2, 3, seed=17)):
        bare = forward(g, w)
        masked = forward(g, w, np.ones(g.num_edges))
        for v in bare:
            assert np.array_equal(bare[v].probs, masked[v].probs)


def test_probs_sum_to_one():
    g = make_small_random()
    for w in (gcn_weights((3, 5, 2), seed=2), gat_weights(3, 4, 2, 2, seed=4)):
        for p in forward(g, w).values():
            assert abs(p.probs.sum() - 1.0) < 1e-6
            assert (p.probs >= 0).all()


def test_locality_outside_edge_bit_exact():
    g = make_small_random(seed=6)
    from shapsparse import extract_computational_graph

    for w in (gcn_weights((3, 4, 2), seed=7), gat_weights(3, 3, 2, 2, seed=8)):
        v = 0
        cg = extract_computational_graph(g, v, 2)
        outside = np.setdiff1d(np.arange(g.num_edges), cg.edge_ids)
        if outside.size == 0:
            continue
        base = forward(g, w, targets=[v])[v].probs
        mask = np.ones(g.num_edges)
        mask[outside] = 0.37
        assert np.array_equal(forward(g, w, mask, targets=[v])[v].probs, base)


def test_zero_mask_reduces_to_self_loop_only():
    g, w = two_node_fixture()
    probs = forward(g, w, np.zeros(1))[1].probs
    # without renormalization the self weight stays 1/d~ = 1/2
    x1 = np.array([0.0, 1.0])
    h = np.maximum(0.5 * (x1 @ w.layers[0].weight) + w.layers[0].bias, 0.0)
    logits = 0.5 * (h @ w.layers[1].weight) + w.layers[1].bias
    expected = np.exp(logits - logits.max()) / np.exp(logits - logits.max()).sum()
    assert np.allclose(probs, expected, atol=1e-12)


def test_gcn_permutation_equivariance():
    g = make_small_random(seed=9)
    w = gcn_weights((3, 4, 2), seed=10)
    rng = np.random.default_rng(0)
    perm = rng.permutation(g.num_nodes)
    mask = rng.random(g.num_edges)

    old_edges = list(zip(g.edge_src.tolist(), g.csr_targets.tolist()))
    new_edges = [(int(perm[s]), int(perm[d])) for s, d in old_edges]
    feats = np.empty_like(g.features)
    feats[perm] = g.features
    labels = np.empty_like(g.labels)
    labels[perm] = g.labels
    gp = make_bundle(g.num_nodes, new_edges, feats, g.num_classes, labels=labels)
    new_ids = {e: i for i, e in enumerate(sorted(new_edges))}
    mask_p = np.empty_like(mask)
    for old_id, (s, d) in enumerate(old_edges):
        mask_p[new_ids[(int(perm[s]), int(perm[d]))]] = mask[old_id]

    base = forward(g, w, mask)
    permuted = forward(gp, w, mask_p)
    for v in range(g.num_nodes):
        assert np.allclose(base[v].probs, permuted[int(perm[v])].probs, rtol=0, atol=1e-12)


@pytest.mark.parametrize("kind", ["gcn", "gat"])
def test_evaluator_matches_forward(kind):
    g = make_small_random(seed=12)
    w = gcn_weights((3, 4, 2), seed=1) if kind == "gcn" else gat_weights(3, 3, 2, 2, seed=1)
    for v in range(g.num_nodes):
        ev = CoalitionEvaluator(g, w, v)
        rng = np.random.default_rng(v)
        masks = rng.random((6, ev.n))
        masks[masks < 0.3] = 0.0
        got = ev.evaluate(masks)
        for i in range(masks.shape[0]):
            lifted = np.ones(g.num_edges)
            lifted[ev.players] = masks[i]
            want = forward(g, w, lifted, targets=[v])[v].probs
            assert np.allclose(got[i], want, atol=1e-12)


def test_evaluator_renormalize_matches_forward():
    g = make_small_random(seed=12)
    w = gcn_weights((3, 4, 2), seed=1)
    v = 1
    ev = CoalitionEvaluator(g, w, v, renormalize_per_mask=True)
    masks = (np.random.default_rng(2).random((8, ev.n)) > 0.4).astype(float)
    got = ev.evaluate(masks)
    for i in range(8):
        lifted = np.ones(g.num_edges)
        lifted[ev.players] = masks[i]
        want = forward(g, w, lifted, targets=[v], renormalize_per_mask=True)[v].probs
        assert np.allclose(got[i], want, atol=1e-12)


def test_renormalized_mask_equals_materialized_pruned_graph():
    g = make_small_random(seed=14)
    w = gcn_weights((3, 4, 2), seed=3)
    rng = np.random.default_rng(5)
    keep = rng.random(g.num_edges) > 0.5
    pruned = materialize(SparsifiedGraph(parent=g, kept=np.flatnonzero(keep).astype(np.int64), tau=0.0))
    via_mask = forward(g, w, keep.astype(float), renormalize_per_mask=True)
    via_graph = forward(pruned, w)
    for v in range(g.num_nodes):
        assert np.allclose(via_mask[v].probs, via_graph[v].probs, atol=1e-12)


def test_argmax_tie_breaks_low_class():
    g = make_bundle(1, [], np.zeros((1, 2), dtype=np.float32), 2)
    w = ModelWeights(
        kind="gcn",
        layers=(GCNLayer(weight=np.zeros((2, 2)), bias=np.zeros(2)),),
    )
    pred = forward(g, w)[0]
    assert np.allclose(pred.probs, [0.5, 0.5])
    assert pred.predicted_class == 0


# --- MAC accounting


def cora_gcn():
    return ModelWeights(
        kind="gcn",
        layers=(
            GCNLayer(weight=np.zeros((1433, 16)), bias=np.zeros(16)),
            GCNLayer(weight=np.zeros((16, 7)), bias=np.zeros(7)),
        ),
    )


def pubmed_gcn():
    return ModelWeights(
        kind="gcn",
        layers=(
            GCNLayer(weight=np.zeros((500, 16)), bias=np.zeros(16)),
            GCNLayer(weight=np.zeros((16, 3)), bias=np.zeros(3)),
        ),
    )


def test_count_macs_gcn_anchors():
    assert count_macs(cora_gcn(), 2708, 10556) == 305_072
    assert count_macs(cora_gcn(), 2708, 2111) == 110_837
    assert count_macs(pubmed_gcn(), 19717, 88648) == 2_058_935
    kept = math.ceil((1 - 0.8) * 88648)
    assert 711_000 <= count_macs(pubmed_gcn(), 19717, kept) < 712_000


def test_count_macs_gat_formula():
    w = gat_weights(10, 16, 8, 7, seed=0)
    n, m = 100, 400
    # documented cost model: per unit, per layer, per head: head_dim * 3
    expected = (m + n) * (8 * 16 * 3) + (m + n) * (1 * 7 * 3)
    assert count_macs(w, n, m) == expected


# --- validation and weights io


def test_nan_weights_rejected():
    w1 = np.zeros((2, 2))
    w1[0, 0] = np.nan
    w = ModelWeights(kind="gcn", layers=(GCNLayer(weight=w1, bias=np.zeros(2)),))
    with pytest.raises(EngineError, match="non-finite"):
        w.validate()


def test_dimension_mismatch_rejected():
    g = make_bundle(1, [], np.zeros((1, 3), dtype=np.float32), 2)
    w = gcn_weights((2, 4, 2), seed=0)
    with pytest.raises(EngineError, match="feature dim"):
        forward(g, w)
    with pytest.raises(EngineError, match="layer 1"):
        ModelWeights(
            kind="gcn",
            layers=(
                GCNLayer(weight=np.zeros((3, 4)), bias=np.zeros(4)),
                GCNLayer(weight=np.zeros((5, 2)), bias=np.zeros(2)),
            ),
        ).validate()


def test_bad_mask_rejected():
    g, w = two_node_fixture()
    with pytest.raises(EngineError, match="mask length"):
        forward(g, w, np.ones(3))
    with pytest.raises(EngineError, match="finite"):
        forward(g, w, np.array([-0.1]))


@pytest.mark.parametrize("kind", ["gcn", "gat"])
def test_weights_round_trip(tmp_path, kind):
    w = gcn_weights((3, 4, 2), seed=5) if kind == "gcn" else gat_weights(3, 3, 2, 2, seed=5)
    save_weights(w, tmp_path)
    loaded = load_weights(tmp_path)
    assert loaded.kind == w.kind
    g = make_small_random(seed=3)
    a = full_graph_probs(g, w.__class__(kind=w.kind, layers=w.layers))
    b = full_graph_probs(g, loaded)
    # float32 serialization rounds the tensors; outputs stay close
    assert np.allclose(a, b, atol=1e-5)
    save_weights(loaded, tmp_path / "again")
    assert (tmp_path / "weights.f32").read_bytes() == (tmp_path / "again" / "weights.f32").read_bytes()


def test_weights_manifest_overrun_rejected(tmp_path):
    w = gcn_weights((3, 4, 2), seed=5)
    save_weights(w, tmp_path)
    (tmp_path / "weights.f32").write_bytes((tmp_path / "weights.f32").read_bytes()[:-8])
    with pytest.raises(EngineError, match="overruns"):
        load_weights(tmp_path)
