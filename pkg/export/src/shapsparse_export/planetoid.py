"""Citation-dataset acquisition: raw-format parsing and download.

The raw distribution ships eight files per dataset
(ind.<name>.{x,y,tx,ty,allx,ally,graph,test.index}): pickled scipy
matrices of bag-of-words features for the labeled/known/test partitions,
one-hot labels, a node->neighbors adjacency dict, and the test node ids.
Test ids may be non-contiguous (citeseer has isolated test nodes); missing
rows are zero-filled, the standard fix.
"""

from __future__ import annotations

import pickle
from pathlib import Path

import numpy as np
import scipy.sparse as sp

DATASETS = ("cora", "citeseer", "pubmed")
RAW_URL = "https://github.com/kimiyoung/planetoid/raw/master/data"
RAW_SUFFIXES = ("x", "y", "tx", "ty", "allx", "ally", "graph", "test.index")


def raw_file_names(name: str) -> list[str]:
    return [f"ind.{name}.{suffix}" for suffix in RAW_SUFFIXES]


def download_raw(name: str, dest_dir) -> None:
    """Fetch the raw files; raises a clear error when the network is absent."""
    import requests

    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASETS}")
    dest = Path(dest_dir)
    dest.mkdir(parents=True, exist_ok=True)
    for fname in raw_file_names(name):
        target = dest / fname
        if target.is_file():
            continue
        url = f"{RAW_URL}/{fname}"
        try:
            resp = requests.get(url, timeout=60)
            resp.raise_for_status()
        except requests.RequestException as exc:
            raise RuntimeError(
                f"could not download {url}: {exc}. Provide the raw files in "
                f"{dest} manually if this environment has no network access."
            ) from exc
        target.write_bytes(resp.content)


def _unpickle(path: Path):
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def parse_raw(name: str, raw_dir):
    """Assemble full-graph arrays from the raw files.

    Returns dict with features (N, F) float32, labels (N,), undirected
    neighbor dict, and the standard train/val/test masks (train = the
    labeled block, val = the next 500 known nodes, test = test.index).
    """
    raw = Path(raw_dir)
    missing = [f for f in raw_file_names(name) if not (raw / f).is_file()]
    if missing:
        raise FileNotFoundError(f"missing raw files in {raw}: {', '.join(missing)}")

    x = sp.csr_matrix(_unpickle(raw / f"ind.{name}.x"))
    y = np.asarray(_unpickle(raw / f"ind.{name}.y"))
    tx = sp.csr_matrix(_unpickle(raw / f"ind.{name}.tx"))
    ty = np.asarray(_unpickle(raw / f"ind.{name}.ty"))
    allx = sp.csr_matrix(_unpickle(raw / f"ind.{name}.allx"))
    ally = np.asarray(_unpickle(raw / f"ind.{name}.ally"))
    graph = _unpickle(raw / f"ind.{name}.graph")
    test_idx = np.array(
        [int(line) for line in (raw / f"ind.{name}.test.index").read_text().split()],
        dtype=np.int64,
    )

    n_known = allx.shape[0]
    test_span = np.arange(test_idx.min(), test_idx.max() + 1)
    num_nodes = n_known + test_span.size

    features = np.zeros((num_nodes, allx.shape[1]), dtype=np.float32)
    features[:n_known] = allx.toarray()
    # tx row j belongs to node test_idx[j]; span gaps (isolated test nodes
    # in citeseer) keep their zero rows
    features[test_idx] = tx.toarray()

    num_classes = ally.shape[1]
    onehot = np.zeros((num_nodes, num_classes), dtype=np.float64)
    onehot[:n_known] = ally
    onehot[test_idx] = ty
    labels = onehot.argmax(axis=1).astype(np.int64)

    train_mask = np.zeros(num_nodes, dtype=bool)
    train_mask[: x.shape[0]] = True
    val_mask = np.zeros(num_nodes, dtype=bool)
    val_mask[x.shape[0] : min(x.shape[0] + 500, n_known)] = True  # known block only
    test_mask = np.zeros(num_nodes, dtype=bool)
    test_mask[test_idx] = True
    val_mask &= ~test_mask

    return {
        "features": features,
        "labels": labels,
        "graph": {int(k): [int(v) for v in vs] for k, vs in graph.items()},
        "train_mask": train_mask,
        "val_mask": val_mask,
        "test_mask": test_mask,
        "num_classes": int(num_classes),
    }


def symmetrized_edges(graph: dict, num_nodes: int) -> np.ndarray:
    """Directed (src, dst) pairs: both directions of every link, no
    self-loops, deduplicated."""
    pairs = set()
    for u, neighbors in graph.items():
        for v in neighbors:
            if u == v or not (0 <= v < num_nodes):
                continue
            pairs.add((u, v))
            pairs.add((v, u))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    return np.array(sorted(pairs), dtype=np.int64)


def row_normalize(features: np.ndarray) -> np.ndarray:
    """Scale each feature row to sum 1 (zero rows stay zero)."""
    sums = features.sum(axis=1, keepdims=True)
    out = features.astype(np.float32).copy()
    nonzero = sums[:, 0] > 0
    out[nonzero] = out[nonzero] / sums[nonzero].astype(np.float32)
    return out


def per_class_split(labels: np.ndarray, per_class_train: int, per_class_val: int, seed: int):
    """Seeded split used for datasets without a public one: sample
    per_class_train + per_class_val nodes per class, rest is test."""
    rng = np.random.default_rng(seed)
    n = labels.shape[0]
    train = np.zeros(n, dtype=bool)
    val = np.zeros(n, dtype=bool)
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        picked = rng.permutation(members)
        train[picked[:per_class_train]] = True
        val[picked[per_class_train : per_class_train + per_class_val]] = True
    test = ~(train | val)
    return train, val, test
