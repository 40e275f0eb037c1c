"""Shapley-value edge scoring and graph sparsification for GNN inference."""

__version__ = "0.1.0"

from .bundle import (
    FORMAT_VERSION,
    BundleError,
    ComputationalGraph,
    GraphBundle,
    PlantedTruth,
    SynthParams,
    edge_endpoints,
    extract_computational_graph,
    generate_synthetic,
    load_bundle,
    load_planted_truth,
    save_bundle,
    save_planted_truth,
)
from .engine import (
    CoalitionEvaluator,
    EngineError,
    GATLayer,
    GCNLayer,
    ModelWeights,
    Prediction,
    count_macs,
    forward,
    full_graph_probs,
    load_weights,
    predicted_classes,
    save_weights,
)
from .explainers import (
    Explanation,
    PlayerSet,
    TooFewSamples,
    TooManyPlayers,
    default_sample_count,
    exact_shapley,
    explain_all,
    kernel_shapley,
    kernel_weight,
    players_of,
    random_baseline,
    read_explanations,
    saliency_baseline,
    write_explanations,
)
from .sparsify import (
    GlobalEdgeScores,
    SparsifiedGraph,
    aggregate,
    ascending_order,
    descending_order,
    keep_count,
    materialize,
    read_kept,
    read_scores_csv,
    sparsify,
    write_kept,
    write_scores_csv,
)
from .evaluate import (
    SweepReport,
    SweepRow,
    fidelity,
    run_sweep,
    test_accuracy,
    write_curve_svg,
    write_report_csv,
    write_report_json,
)
