"""Reference PyTorch models whose inference semantics match the consumer
engine exactly.

GCN: H' = A_hat @ H @ W + b with A_hat = D~^{-1/2} (A + I) D~^{-1/2},
d~ = 1 + in-degree, messages flowing src -> dst. GAT: attention logit
LeakyReLU(a_src . (W h_src) + a_dst . (W h_dst), slope 0.2), softmax over
each destination's in-edges including an always-present self-loop; layer 1
concatenates the heads, layer 2 is a single head. Dropout (inputs of each
layer) is active only in training; exported inference is dropout-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F


def _glorot(*shape, gen):
    t = torch.empty(*shape)
    fan_in, fan_out = shape[-2], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=gen)
    return torch.nn.Parameter(t)


class GCN(torch.nn.Module):
    def __init__(self, in_dim, hidden, out_dim, dropout=0.5, seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.w1 = _glorot(in_dim, hidden, gen=gen)
        self.b1 = torch.nn.Parameter(torch.zeros(hidden))
        self.w2 = _glorot(hidden, out_dim, gen=gen)
        self.b2 = torch.nn.Parameter(torch.zeros(out_dim))
        self.dropout = dropout

    def forward(self, x, a_hat):
        x = F.dropout(x, self.dropout, self.training)
        x = torch.relu(torch.sparse.mm(a_hat, x @ self.w1) + self.b1)
        x = F.dropout(x, self.dropout, self.training)
        return torch.sparse.mm(a_hat, x @ self.w2) + self.b2

    def export_layers(self):
        return [
            {"weight": self.w1.detach().numpy(), "bias": self.b1.detach().numpy()},
            {"weight": self.w2.detach().numpy(), "bias": self.b2.detach().numpy()},
        ]


class GATLayer(torch.nn.Module):
    def __init__(self, in_dim, head_dim, heads, gen, slope=0.2):
        super().__init__()
        self.weight = _glorot(heads, in_dim, head_dim, gen=gen)
        self.att_src = _glorot(heads, head_dim, gen=gen)
        self.att_dst = _glorot(heads, head_dim, gen=gen)
        self.heads, self.head_dim, self.slope = heads, head_dim, slope

    def forward(self, x, src, dst, num_nodes):
        """src/dst include one self-loop per node appended at the end."""
        outs = []
        for h in range(self.heads):
            z = x @ self.weight[h]
            logits = F.leaky_relu(
                z[src] @ self.att_src[h] + z[dst] @ self.att_dst[h], self.slope
            )
            seg_max = torch.full((num_nodes,), -torch.inf).index_reduce_(
                0, dst, logits, "amax", include_self=True
            )
            ex = torch.exp(logits - seg_max[dst])
            denom = torch.zeros(num_nodes).index_add_(0, dst, ex)
            alpha = ex / denom[dst]
            out = torch.zeros(num_nodes, self.head_dim).index_add_(
                0, dst, alpha.unsqueeze(1) * z[src]
            )
            outs.append(out)
        return torch.cat(outs, dim=1)


class GAT(torch.nn.Module):
    def __init__(self, in_dim, head_dim, heads, out_dim, dropout=0.5, seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.l1 = GATLayer(in_dim, head_dim, heads, gen)
        self.l2 = GATLayer(heads * head_dim, out_dim, 1, gen)
        self.b1 = torch.nn.Parameter(torch.zeros(heads * head_dim))
        self.b2 = torch.nn.Parameter(torch.zeros(out_dim))
        self.dropout = dropout

    def forward(self, x, src, dst, num_nodes):
        x = F.dropout(x, self.dropout, self.training)
        x = torch.relu(self.l1(x, src, dst, num_nodes) + self.b1)
        x = F.dropout(x, self.dropout, self.training)
        return self.l2(x, src, dst, num_nodes) + self.b2

    def export_layers(self):
        return [
            {
                "weight": self.l1.weight.detach().numpy(),
                "att_src": self.l1.att_src.detach().numpy(),
                "att_dst": self.l1.att_dst.detach().numpy(),
                "bias": self.b1.detach().numpy(),
                "merge": "concat",
                "leaky_slope": 0.2,
            },
            {
                "weight": self.l2.weight.detach().numpy(),
                "att_src": self.l2.att_src.detach().numpy(),
                "att_dst": self.l2.att_dst.detach().numpy(),
                "bias": self.b2.detach().numpy(),
                "merge": "concat",
                "leaky_slope": 0.2,
            },
        ]


@dataclass
class TrainResult:
    model: torch.nn.Module
    probs: np.ndarray  # (N, C) float32 inference probabilities
    accuracies: dict  # train/val/test fractions


def _normalized_adjacency(edges: np.ndarray, num_nodes: int) -> torch.Tensor:
    src = torch.from_numpy(edges[:, 0])
    dst = torch.from_numpy(edges[:, 1])
    deg = torch.ones(num_nodes)
    deg.index_add_(0, dst, torch.ones(dst.shape[0]))
    inv_sqrt = deg.rsqrt()
    rows = torch.cat([dst, torch.arange(num_nodes)])
    cols = torch.cat([src, torch.arange(num_nodes)])
    vals = torch.cat([inv_sqrt[dst] * inv_sqrt[src], 1.0 / deg])
    idx = torch.stack([rows, cols])
    return torch.sparse_coo_tensor(idx, vals, (num_nodes, num_nodes)).coalesce()


def _self_loop_edges(edges: np.ndarray, num_nodes: int):
    loop = np.arange(num_nodes, dtype=np.int64)
    src = torch.from_numpy(np.concatenate([edges[:, 0], loop]))
    dst = torch.from_numpy(np.concatenate([edges[:, 1], loop]))
    return src, dst


def train_model(
    *,
    kind: str,
    edges: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    train_mask: np.ndarray,
    val_mask: np.ndarray,
    test_mask: np.ndarray,
    num_classes: int,
    hidden: int = 16,
    heads: int = 8,
    epochs: int = 200,
    lr: float = 0.01,
    weight_decay: float = 5e-4,
    dropout: float = 0.5,
    seed: int = 0,
) -> TrainResult:
    """Deterministic CPU training run; returns the model and its inference
    probabilities on the full graph."""
    torch.manual_seed(seed)
    num_nodes = features.shape[0]
    # np.array copies: loaded bundles are backed by read-only buffers
    x = torch.from_numpy(np.array(features, dtype=np.float32))
    y = torch.from_numpy(np.array(labels, dtype=np.int64))
    if kind == "gcn":
        a_hat = _normalized_adjacency(edges, num_nodes)
        model = GCN(features.shape[1], hidden, num_classes, dropout, seed)
        run = lambda: model(x, a_hat)
    elif kind == "gat":
        src, dst = _self_loop_edges(edges, num_nodes)
        model = GAT(features.shape[1], hidden, heads, num_classes, dropout, seed)
        run = lambda: model(x, src, dst, num_nodes)
    else:
        raise ValueError(f"unknown model kind {kind!r}")

    train_idx = torch.from_numpy(np.flatnonzero(train_mask))
    optimizer = torch.optim.Adam(model.parameters(), lr=lr, weight_decay=weight_decay)
    model.train()
    for _ in range(epochs):
        optimizer.zero_grad()
        loss = F.cross_entropy(run()[train_idx], y[train_idx])
        loss.backward()
        optimizer.step()

    model.eval()
    with torch.no_grad():
        logits = run()
        probs = torch.softmax(logits, dim=1)
        pred = logits.argmax(dim=1)
    accuracies = {}
    for split, mask in (("train", train_mask), ("val", val_mask), ("test", test_mask)):
        idx = np.flatnonzero(mask)
        accuracies[split] = (
            float((pred[idx] == y[idx]).float().mean()) if idx.size else float("nan")
        )
    return TrainResult(model=model, probs=probs.numpy().astype(np.float32), accuracies=accuracies)
