"""Forward inference and reverse-mode gradients over a Graph.

Convention: if the final node is a softmax, `logits` are that node's input
activation and `probs` its output; otherwise the graph output is the logits
and probs = softmax(logits). Gradients accumulate in reverse topological
order from a seed on the logits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .graph import Graph, GradientUnavailableError, ShapeError


@dataclass
class ForwardResult:
    logits: np.ndarray
    probs: np.ndarray
    top_index: int | np.ndarray
    top_confidence: float | np.ndarray


@dataclass
class Gradients:
    wrt_input: np.ndarray
    wrt_params: dict[str, np.ndarray]


def _as_batch(graph: Graph, x: np.ndarray):
    x = np.asarray(x)
    spec = graph.input_spec.shape
    if x.shape == spec:
        return x[None, ...], True
    if x.ndim == len(spec) + 1 and x.shape[1:] == spec:
        return x, False
    raise ShapeError(f"input shape {x.shape} does not match expected {spec} (optionally batched)")


_FORWARD = {
    "relu": lambda x, node, g: ops.relu_forward(x),
    "flatten": lambda x, node, g: ops.flatten_forward(x),
    "softmax": lambda x, node, g: ops.softmax_forward(x),
    "normalize": lambda x, node, g: ops.normalize_forward(
        x, node.attrs.get("mean", 0.0), node.attrs.get("std", 1.0)),
    "maxpool2d": lambda x, node, g: ops.maxpool2d_forward(
        x, int(node.attrs.get("ksize", 2)), int(node.attrs.get("stride", node.attrs.get("ksize", 2)))),
    "avgpool2d": lambda x, node, g: ops.avgpool2d_forward(
        x, int(node.attrs.get("ksize", 2)), int(node.attrs.get("stride", node.attrs.get("ksize", 2)))),
}


def forward_acts(graph: Graph, xb: np.ndarray):
    """Run the graph on a batch, returning all activations and per-node contexts."""
    acts = {"input": xb}
    ctxs = {}
    for node in graph.nodes:
        if node.op == "conv2d":
            out, ctx = ops.conv2d_forward(
                acts[node.inputs[0]],
                graph.params[node.params["weight"]], graph.params[node.params["bias"]],
                int(node.attrs.get("stride", 1)), node.attrs.get("padding", "valid"))
        elif node.op == "dense":
            out, ctx = ops.dense_forward(
                acts[node.inputs[0]],
                graph.params[node.params["weight"]], graph.params[node.params["bias"]])
        elif node.op == "add":
            out, ctx = ops.add_forward(acts[node.inputs[0]], acts[node.inputs[1]])
        else:
            out, ctx = _FORWARD[node.op](acts[node.inputs[0]], node, graph)
        acts[node.name] = out
        ctxs[node.name] = ctx
    return acts, ctxs


def _logits_from_acts(graph: Graph, acts) -> np.ndarray:
    last = graph.nodes[-1]
    if last.op == "softmax":
        return acts[last.inputs[0]]
    return acts[last.name]


def forward(graph, x: np.ndarray) -> ForwardResult:
    """Deterministic inference: logits, softmax probabilities, and top-1.

    Accepts a single sample shaped like the input spec or a batch with a
    leading N axis; scalar top-1 fields collapse for single samples.
    Dispatches to quantized execution when given a QuantizedGraph.
    """
    if hasattr(graph, "float_twin"):  # QuantizedGraph
        return graph.forward(x)
    xb, single = _as_batch(graph, x)
    acts, _ = forward_acts(graph, xb)
    logits = _logits_from_acts(graph, acts)
    probs = ops.softmax_forward(logits)[0] if graph.nodes[-1].op != "softmax" else acts[graph.output_name]
    idx = probs.argmax(axis=-1)
    conf = probs[np.arange(probs.shape[0]), idx]
    if single:
        return ForwardResult(logits[0], probs[0], int(idx[0]), float(conf[0]))
    return ForwardResult(logits, probs, idx, conf)


_BACKWARD = {
    "conv2d": ops.conv2d_backward,
    "dense": ops.dense_backward,
    "relu": ops.relu_backward,
    "flatten": ops.flatten_backward,
    "softmax": ops.softmax_backward,
    "normalize": ops.normalize_backward,
    "maxpool2d": ops.maxpool2d_backward,
    "avgpool2d": ops.avgpool2d_backward,
}


def backprop_from_logits(graph: Graph, xb: np.ndarray, dlogits: np.ndarray,
                         acts=None, ctxs=None) -> Gradients:
    """Reverse-mode accumulation seeded with dL/dlogits (batched)."""
    if acts is None:
        acts, ctxs = forward_acts(graph, xb)
    grads = {name: None for name in acts}
    last = graph.nodes[-1]
    seed_at = last.inputs[0] if last.op == "softmax" else last.name
    grads[seed_at] = dlogits
    pgrads: dict[str, np.ndarray] = {}
    stop = len(graph.nodes) - 1 if last.op == "softmax" else len(graph.nodes)
    for node in reversed(graph.nodes[:stop]):
        g = grads.get(node.name)
        if g is None:
            continue
        if node.op == "add":
            din = (g, g)
        else:
            din, dp = _BACKWARD[node.op](g, ctxs[node.name])
            din = (din,)
            for slot, dv in dp.items():
                pname = node.params[slot]
                pgrads[pname] = pgrads.get(pname, 0) + dv
        for src, dv in zip(node.inputs, din):
            grads[src] = dv if grads[src] is None else grads[src] + dv
    dx = grads["input"]
    if dx is None:
        dx = np.zeros_like(xb)
    return Gradients(dx, pgrads)


def loss_logit_seed(logits: np.ndarray, loss: str, target, kappa: float = 0.0):
    """dL/dlogits for the supported losses, batched.

    cross_entropy: L = -log softmax(z)[target]
    cw_margin:     L = max(z[target] - max_{j != target} z[j], -kappa)
    """
    z = np.asarray(logits)
    n, k = z.shape
    t = np.broadcast_to(np.asarray(target), (n,))
    if np.any(t >= k) or np.any(t < 0):
        raise ValueError(f"loss target out of range: {target} with {k} classes")
    if loss == "cross_entropy":
        s = ops.softmax_forward(z)[0]
        seed = s.copy()
        seed[np.arange(n), t] -= 1.0
        return seed
    if loss == "cw_margin":
        seed = np.zeros_like(z)
        masked = z.copy()
        masked[np.arange(n), t] = -np.inf
        other = masked.argmax(axis=-1)
        margin = z[np.arange(n), t] - masked[np.arange(n), other]
        active = margin > -kappa
        seed[np.arange(n)[active], t[active]] = 1.0
        seed[np.arange(n)[active], other[active]] = -1.0
        return seed
    raise ValueError(f"unknown loss {loss!r} (want cross_entropy or cw_margin)")


def input_gradient(graph, x: np.ndarray, loss: str = "cross_entropy",
                   target=0, kappa: float = 0.0) -> np.ndarray:
    """d(loss)/d(input), same shape as x. Refused on quantized graphs."""
    if hasattr(graph, "float_twin"):
        raise GradientUnavailableError(
            "exact gradients are not computed through integer ops; "
            "use query-based (black-box) attacks on this model")
    xb, single = _as_batch(graph, x)
    acts, ctxs = forward_acts(graph, xb)
    logits = _logits_from_acts(graph, acts)
    seed = loss_logit_seed(logits, loss, target, kappa)
    g = backprop_from_logits(graph, xb, seed, acts, ctxs).wrt_input
    return g[0] if single else g


def logit_jacobian_rows(graph: Graph, x: np.ndarray, class_indices) -> np.ndarray:
    """Gradient of selected logit components wrt the input (one row per class)."""
    xb, single = _as_batch(graph, x)
    if not single:
        raise ValueError("logit_jacobian_rows expects a single sample")
    acts, ctxs = forward_acts(graph, xb)
    logits = _logits_from_acts(graph, acts)
    rows = []
    for k in class_indices:
        seed = np.zeros_like(logits)
        seed[0, k] = 1.0
        rows.append(backprop_from_logits(graph, xb, seed, acts, ctxs).wrt_input[0])
    return np.stack(rows)
