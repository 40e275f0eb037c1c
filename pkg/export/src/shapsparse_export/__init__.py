"""Training and export tooling for shapsparse bundles and weights."""

__version__ = "0.1.0"

from .formats import read_probs, write_bundle, write_probs, write_weights
from .models import GAT, GCN, TrainResult, train_model
from .pipeline import crosscheck, export_dataset, train_and_export
from .planetoid import (
    DATASETS,
    download_raw,
    parse_raw,
    per_class_split,
    row_normalize,
    symmetrized_edges,
)
