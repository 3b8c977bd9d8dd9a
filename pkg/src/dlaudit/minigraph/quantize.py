"""Post-training affine quantization (uint8 by default) and simulated execution.

Convention throughout: real = scale * (q - zero_point), rounding ties-to-even.
Quantized graphs execute by dequantize-per-tensor (parameters and activations
are squeezed through their affine grid), so outputs track the float graph up
to grid resolution while exact input gradients are deliberately unavailable.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .engine import ForwardResult, _as_batch, forward_acts, _logits_from_acts
from .graph import Graph, GraphError, QuantParams

SCALE_FLOOR = 1e-8


def affine_params(lo: float, hi: float, bits: int = 8) -> QuantParams:
    """Scale/zero-point from an observed [lo, hi] range, widened to include 0."""
    lo = min(float(lo), 0.0)
    hi = max(float(hi), 0.0)
    qmax = (1 << bits) - 1
    scale = (hi - lo) / qmax
    if scale < SCALE_FLOOR:
        warnings.warn(f"degenerate tensor range [{lo}, {hi}]; clamping scale to {SCALE_FLOOR}")
        scale = SCALE_FLOOR
    zero_point = int(np.clip(np.round(-lo / scale), 0, qmax))
    return QuantParams(scale=scale, zero_point=zero_point)


def quantize_tensor(x: np.ndarray, qp: QuantParams, bits: int = 8) -> np.ndarray:
    qmax = (1 << bits) - 1
    q = np.round(np.asarray(x, dtype=np.float64) / qp.scale) + qp.zero_point
    return np.clip(q, 0, qmax).astype(np.uint8)


def dequantize_tensor(q: np.ndarray, qp: QuantParams) -> np.ndarray:
    return (qp.scale * (np.asarray(q, dtype=np.float64) - qp.zero_point)).astype(np.float32)


def fake_quant(x: np.ndarray, qp: QuantParams, bits: int = 8) -> np.ndarray:
    return dequantize_tensor(quantize_tensor(x, qp, bits), qp).astype(x.dtype, copy=False)


@dataclass
class QuantizedGraph:
    """A float graph's topology with uint8 parameters and per-tensor affine params."""
    float_twin: Graph                      # topology + specs (its params are ignored)
    qparams_w: dict[str, QuantParams]      # parameter tensor name -> params
    qweights: dict[str, np.ndarray]        # parameter tensor name -> uint8 data
    qparams_act: dict[str, QuantParams]    # node name -> activation params
    input_qp: QuantParams
    bits: int = 8
    _deq_cache: dict = field(default_factory=dict, repr=False)

    @property
    def input_spec(self):
        return self.float_twin.input_spec

    @property
    def nodes(self):
        return self.float_twin.nodes

    @property
    def num_classes(self):
        return self.float_twin.num_classes

    def _deq_graph(self) -> Graph:
        g = self._deq_cache.get("graph")
        if g is None:
            params = {name: dequantize_tensor(q, self.qparams_w[name])
                      for name, q in self.qweights.items()}
            g = Graph(self.float_twin.input_spec, self.float_twin.nodes, params)
            self._deq_cache["graph"] = g
        return g

    def forward(self, x: np.ndarray) -> ForwardResult:
        g = self._deq_graph()
        xb, single = _as_batch(g, x)
        xb = fake_quant(np.asarray(xb, dtype=np.float32), self.input_qp, self.bits)
        # run node-by-node so each activation can be squeezed through its grid
        acts = {"input": xb}
        for node in g.nodes:
            one, _ = _node_forward(g, node, acts)
            qp = self.qparams_act.get(node.name)
            acts[node.name] = fake_quant(one, qp, self.bits) if qp is not None else one
        logits = _logits_from_acts(g, acts)
        probs = ops.softmax_forward(logits)[0] if g.nodes[-1].op != "softmax" else acts[g.output_name]
        idx = probs.argmax(axis=-1)
        conf = probs[np.arange(probs.shape[0]), idx]
        if single:
            return ForwardResult(logits[0], probs[0], int(idx[0]), float(conf[0]))
        return ForwardResult(logits, probs, idx, conf)


def _node_forward(g: Graph, node, acts):
    if node.op == "conv2d":
        return ops.conv2d_forward(acts[node.inputs[0]],
                                  g.params[node.params["weight"]], g.params[node.params["bias"]],
                                  int(node.attrs.get("stride", 1)), node.attrs.get("padding", "valid"))
    if node.op == "dense":
        return ops.dense_forward(acts[node.inputs[0]],
                                 g.params[node.params["weight"]], g.params[node.params["bias"]])
    if node.op == "add":
        return ops.add_forward(acts[node.inputs[0]], acts[node.inputs[1]])
    from .engine import _FORWARD
    return _FORWARD[node.op](acts[node.inputs[0]], node, g)


def quantize(graph: Graph, calibration_inputs: np.ndarray, bits: int = 8) -> QuantizedGraph:
    """Post-training quantization: weight ranges from the weights themselves,
    activation ranges from forward passes over the calibration inputs."""
    if bits != 8:
        raise GraphError("only 8-bit quantization is implemented")
    calib = np.asarray(calibration_inputs, dtype=np.float32)
    if calib.shape[1:] != graph.input_spec.shape:
        raise GraphError(f"calibration batch shape {calib.shape} does not match input spec")

    qparams_w, qweights = {}, {}
    for name, w in graph.params.items():
        qp = affine_params(float(w.min()), float(w.max()), bits)
        qparams_w[name] = qp
        qweights[name] = quantize_tensor(w, qp, bits)

    acts, _ = forward_acts(graph, calib)
    input_qp = affine_params(float(calib.min()), float(calib.max()), bits)
    qparams_act = {}
    for node in graph.nodes:
        a = acts[node.name]
        qparams_act[node.name] = affine_params(float(a.min()), float(a.max()), bits)

    return QuantizedGraph(float_twin=graph.copy(), qparams_w=qparams_w, qweights=qweights,
                          qparams_act=qparams_act, input_qp=input_qp, bits=bits)
