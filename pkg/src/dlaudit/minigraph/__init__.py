"""Miniature tensor graph engine: inference, input/parameter gradients,
seeded SGD training, and post-training uint8 affine quantization."""

from .graph import (
    Graph, OpNode, TensorSpec, QuantParams,
    GraphError, ShapeError, GradientUnavailableError, OP_SET,
)
from .engine import (
    forward, input_gradient, logit_jacobian_rows, forward_acts,
    backprop_from_logits, loss_logit_seed, ForwardResult, Gradients,
)
from .quantize import (
    QuantizedGraph, quantize, affine_params,
    quantize_tensor, dequantize_tensor, fake_quant,
)
from .train import train, TrainConfig, TrainResult
from .fileio import save_graph, load_graph, read_header, FormatError, MAGIC as FILE_MAGIC

__all__ = [
    "Graph", "OpNode", "TensorSpec", "QuantParams", "OP_SET",
    "GraphError", "ShapeError", "GradientUnavailableError", "FormatError",
    "forward", "input_gradient", "logit_jacobian_rows", "forward_acts",
    "backprop_from_logits", "loss_logit_seed", "ForwardResult", "Gradients",
    "QuantizedGraph", "quantize", "affine_params",
    "quantize_tensor", "dequantize_tensor", "fake_quant",
    "train", "TrainConfig", "TrainResult",
    "save_graph", "load_graph", "read_header", "FILE_MAGIC",
]
