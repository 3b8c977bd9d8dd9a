"""Seeded mini-batch SGD for fixture models and attack substitutes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import backprop_from_logits, forward, forward_acts, _logits_from_acts, loss_logit_seed
from .graph import Graph, GraphError


@dataclass
class TrainConfig:
    lr: float = 0.05
    epochs: int = 50
    batch: int = 16
    seed: int = 0


@dataclass
class TrainResult:
    graph: Graph
    train_accuracy: float
    final_loss: float


def train(graph: Graph, inputs: np.ndarray, labels: np.ndarray, cfg: TrainConfig) -> TrainResult:
    """Cross-entropy SGD on a private copy of the graph; bit-reproducible per seed."""
    x = np.asarray(inputs, dtype=np.float32)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] == 0:
        raise GraphError("empty training dataset")
    if x.shape[1:] != graph.input_spec.shape:
        raise GraphError(f"training input shape {x.shape[1:]} does not match spec {graph.input_spec.shape}")
    k = graph.num_classes
    if y.min() < 0 or y.max() >= k:
        raise GraphError(f"label out of range for {k} classes: {y.min()}..{y.max()}")

    g = graph.copy()
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    loss_val = float("nan")
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch):
            sel = order[start:start + cfg.batch]
            xb, yb = x[sel], y[sel]
            acts, ctxs = forward_acts(g, xb)
            logits = _logits_from_acts(g, acts)
            seed = loss_logit_seed(logits, "cross_entropy", yb) / len(sel)
            grads = backprop_from_logits(g, xb, seed, acts, ctxs)
            if cfg.lr != 0:
                for name, dv in grads.wrt_params.items():
                    g.params[name] -= (cfg.lr * dv).astype(g.params[name].dtype, copy=False)
            p = np.exp(logits - logits.max(axis=-1, keepdims=True))
            p /= p.sum(axis=-1, keepdims=True)
            loss_val = float(-np.log(np.maximum(p[np.arange(len(sel)), yb], 1e-12)).mean())

    pred = forward(g, x).top_index
    acc = float((pred == y).mean())
    return TrainResult(graph=g, train_accuracy=acc, final_loss=loss_val)
