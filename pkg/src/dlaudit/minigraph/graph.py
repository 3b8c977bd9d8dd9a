"""Tensor computation graphs: node containers, validation, static shape checking.

A Graph is a topologically ordered list of OpNodes over named parameter
tensors. Shape consistency is checked once, at construction / load time;
execution never re-derives shapes.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np


class GraphError(Exception):
    """Structural problem in a graph definition."""


class ShapeError(GraphError):
    """Tensor shapes do not line up end-to-end."""


class GradientUnavailableError(GraphError):
    """Exact gradients are refused for this graph (integer ops); use query-based attacks."""


OP_SET = {
    "conv2d", "dense", "relu", "maxpool2d", "avgpool2d",
    "flatten", "softmax", "add", "normalize",
}

DTYPES = {"f32": np.float32, "u8": np.uint8}


@dataclass(frozen=True)
class QuantParams:
    """Affine quantization: real = scale * (q - zero_point)."""
    scale: float
    zero_point: int

    def __post_init__(self):
        if not self.scale > 0:
            raise GraphError(f"quantization scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class TensorSpec:
    shape: tuple[int, ...]
    dtype: str = "f32"

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise GraphError(f"unsupported dtype {self.dtype!r}")
        if any((not isinstance(d, int)) or d <= 0 for d in self.shape):
            raise ShapeError(f"tensor shape must be positive ints, got {self.shape}")

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


@dataclass
class OpNode:
    name: str
    op: str
    inputs: list[str] = field(default_factory=list)  # producer node names; "input" = graph input
    attrs: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)       # slot -> parameter tensor name


# arity of each op (how many activation inputs it consumes)
_ARITY = {"add": 2}


def _pool_out(side: int, k: int, s: int) -> int:
    if side < k:
        raise ShapeError(f"pool window {k} larger than input side {side}")
    return (side - k) // s + 1


def _conv_out(side: int, k: int, s: int, padding: str) -> int:
    if padding == "same":
        return -(-side // s)
    if side < k:
        raise ShapeError(f"conv kernel {k} larger than unpadded input side {side}")
    return (side - k) // s + 1


class Graph:
    """A float-typed inference graph. Immutable during inference; training copies it."""

    def __init__(self, input_spec: TensorSpec, nodes: list[OpNode], params: dict[str, np.ndarray]):
        self.input_spec = input_spec
        self.nodes = list(nodes)
        self.params = {k: np.asarray(v) for k, v in params.items()}
        self.shapes = self._check()

    # -- validation ---------------------------------------------------------

    def _check(self) -> dict[str, tuple[int, ...]]:
        """Static end-to-end shape inference; raises on any inconsistency."""
        if not self.nodes:
            raise GraphError("graph has no nodes")
        seen: set[str] = set()
        shapes: dict[str, tuple[int, ...]] = {"input": self.input_spec.shape}
        for node in self.nodes:
            if node.op not in OP_SET:
                raise GraphError(f"unknown op {node.op!r} in node {node.name!r}")
            if node.name in seen or node.name == "input":
                raise GraphError(f"duplicate node name {node.name!r}")
            seen.add(node.name)
            want = _ARITY.get(node.op, 1)
            if len(node.inputs) != want:
                raise GraphError(f"node {node.name!r}: op {node.op} takes {want} input(s)")
            in_shapes = []
            for src in node.inputs:
                if src not in shapes:
                    raise GraphError(f"node {node.name!r} reads undefined tensor {src!r}")
                in_shapes.append(shapes[src])
            shapes[node.name] = self._infer(node, in_shapes)
        return shapes

    def _param(self, node: OpNode, slot: str) -> np.ndarray:
        name = node.params.get(slot)
        if name is None or name not in self.params:
            raise GraphError(f"node {node.name!r} missing parameter slot {slot!r}")
        return self.params[name]

    def _infer(self, node: OpNode, ins: list[tuple[int, ...]]) -> tuple[int, ...]:
        op, s = node.op, ins[0]
        if op == "conv2d":
            if len(s) != 3:
                raise ShapeError(f"conv2d input must be HWC, got {s}")
            w = self._param(node, "weight")
            b = self._param(node, "bias")
            kh, kw, cin, cout = w.shape
            if cin != s[2]:
                raise ShapeError(f"node {node.name!r}: conv2d expects {cin} channels, input has {s[2]}")
            if b.shape != (cout,):
                raise ShapeError(f"node {node.name!r}: bias shape {b.shape} != ({cout},)")
            stride = int(node.attrs.get("stride", 1))
            padding = node.attrs.get("padding", "valid")
            if padding not in ("same", "valid"):
                raise GraphError(f"node {node.name!r}: padding must be same|valid")
            return (_conv_out(s[0], kh, stride, padding), _conv_out(s[1], kw, stride, padding), cout)
        if op == "dense":
            w = self._param(node, "weight")
            b = self._param(node, "bias")
            if len(s) != 1:
                raise ShapeError(f"dense input must be flat, got {s} (insert a flatten node)")
            if w.shape[0] != s[0]:
                raise ShapeError(f"node {node.name!r}: dense expects {w.shape[0]} features, input has {s[0]}")
            if b.shape != (w.shape[1],):
                raise ShapeError(f"node {node.name!r}: bias shape {b.shape} != ({w.shape[1]},)")
            return (w.shape[1],)
        if op in ("maxpool2d", "avgpool2d"):
            if len(s) != 3:
                raise ShapeError(f"{op} input must be HWC, got {s}")
            k = int(node.attrs.get("ksize", 2))
            st = int(node.attrs.get("stride", k))
            return (_pool_out(s[0], k, st), _pool_out(s[1], k, st), s[2])
        if op == "flatten":
            return (int(np.prod(s)),)
        if op in ("relu", "softmax"):
            return s
        if op == "normalize":
            mean = np.asarray(node.attrs.get("mean", 0.0))
            std = np.asarray(node.attrs.get("std", 1.0))
            if np.any(np.asarray(std) == 0):
                raise GraphError(f"node {node.name!r}: normalize std must be nonzero")
            for a in (mean, std):
                if a.ndim > 1 or (a.ndim == 1 and len(s) >= 1 and a.shape[0] != s[-1]):
                    raise ShapeError(f"node {node.name!r}: mean/std must be scalar or per-channel")
            return s
        if op == "add":
            if ins[0] != ins[1]:
                raise ShapeError(f"node {node.name!r}: add requires equal shapes, got {ins[0]} vs {ins[1]}")
            return s
        raise GraphError(f"unhandled op {op!r}")

    # -- introspection ------------------------------------------------------

    @property
    def output_name(self) -> str:
        return self.nodes[-1].name

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[self.output_name]

    @property
    def num_classes(self) -> int:
        out = self.output_shape
        if len(out) != 1:
            raise GraphError(f"output is not a class vector: shape {out}")
        return out[0]

    def copy(self) -> "Graph":
        return Graph(self.input_spec, copy.deepcopy(self.nodes),
                     {k: v.copy() for k, v in self.params.items()})

    def param_count(self) -> int:
        return sum(int(v.size) for v in self.params.values())
