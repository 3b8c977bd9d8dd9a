"""Minigraph container format: lossless round trip of topology + tensors.

Layout (little-endian throughout):

    offset 0   magic b"MGRF"
    offset 4   u16 format version (currently 1)
    offset 6   u32 header length H
    offset 10  header: UTF-8 JSON, sorted keys (see below)
    offset 10+H  payload: raw tensor bytes, back to back, in header order

Header keys: kind ("float"|"quantized"), input {shape, dtype}, nodes
[{name, op, inputs, attrs, params}], tensors [{name, shape, dtype, offset,
nbytes, quant}], input_quant, act_quant, bits. Quant entries are
{scale, zero_point} or null.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .graph import Graph, GraphError, OpNode, QuantParams, TensorSpec
from .quantize import QuantizedGraph

MAGIC = b"MGRF"
VERSION = 1

_NP_DTYPE = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


class FormatError(GraphError):
    """File is not a readable minigraph container."""


def _qp_out(qp: QuantParams | None):
    return None if qp is None else {"scale": qp.scale, "zero_point": qp.zero_point}


def _qp_in(d):
    return None if d is None else QuantParams(scale=float(d["scale"]), zero_point=int(d["zero_point"]))


def _node_out(n: OpNode):
    return {"name": n.name, "op": n.op, "inputs": n.inputs, "attrs": n.attrs, "params": n.params}


def _node_in(d) -> OpNode:
    return OpNode(name=d["name"], op=d["op"], inputs=list(d["inputs"]),
                  attrs=dict(d.get("attrs", {})), params=dict(d.get("params", {})))


def save_graph(graph, path) -> None:
    """Serialize a Graph or QuantizedGraph; identical graphs produce identical bytes."""
    path = Path(path)
    if isinstance(graph, QuantizedGraph):
        base = graph.float_twin
        kind = "quantized"
        tensor_src = {name: graph.qweights[name] for name in sorted(graph.qweights)}
        quant_of = {name: _qp_out(graph.qparams_w[name]) for name in tensor_src}
        extra = {
            "input_quant": _qp_out(graph.input_qp),
            "act_quant": {k: _qp_out(v) for k, v in sorted(graph.qparams_act.items())},
            "bits": graph.bits,
        }
    elif isinstance(graph, Graph):
        base = graph
        kind = "float"
        tensor_src = {name: np.asarray(graph.params[name], dtype=np.float32)
                      for name in sorted(graph.params)}
        quant_of = {name: None for name in tensor_src}
        extra = {"input_quant": None, "act_quant": None, "bits": None}
    else:
        raise FormatError(f"cannot serialize object of type {type(graph).__name__}")

    tensors, payload, offset = [], [], 0
    for name, arr in tensor_src.items():
        dtype = "u8" if arr.dtype == np.uint8 else "f32"
        raw = np.ascontiguousarray(arr, dtype=_NP_DTYPE[dtype]).tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": dtype,
                        "offset": offset, "nbytes": len(raw), "quant": quant_of[name]})
        payload.append(raw)
        offset += len(raw)

    header = {
        "kind": kind,
        "input": {"shape": list(base.input_spec.shape), "dtype": base.input_spec.dtype},
        "nodes": [_node_out(n) for n in base.nodes],
        "tensors": tensors,
        **extra,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", VERSION, len(blob)))
        fh.write(blob)
        for raw in payload:
            fh.write(raw)


def read_header(data: bytes) -> dict:
    """Parse and validate the container header; raises FormatError on damage."""
    if len(data) < 10 or data[:4] != MAGIC:
        raise FormatError("not a minigraph file (bad magic)")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != VERSION:
        raise FormatError(f"unsupported minigraph format version {version} (expected {VERSION})")
    if len(data) < 10 + hlen:
        raise FormatError("truncated minigraph header")
    try:
        header = json.loads(data[10:10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt minigraph header: {exc}") from exc
    for key in ("kind", "input", "nodes", "tensors"):
        if key not in header:
            raise FormatError(f"minigraph header missing {key!r}")
    return header


def load_graph(path):
    """Load a Graph or QuantizedGraph; shape checking happens here, not at run time."""
    data = Path(path).read_bytes()
    header = read_header(data)
    body = data[10 + struct.unpack_from("<I", data, 6)[0]:]

    arrays = {}
    for t in header["tensors"]:
        dt = _NP_DTYPE.get(t.get("dtype"))
        if dt is None:
            raise FormatError(f"unknown tensor dtype {t.get('dtype')!r}")
        try:
            name = t["name"]
            shape = [int(d) for d in t["shape"]]
            offset, nbytes = int(t["offset"]), int(t["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed tensor directory entry: {exc}") from exc
        if offset < 0 or nbytes < 0 or any(d < 0 for d in shape):
            raise FormatError(f"tensor {name!r} has negative sizes in its directory entry")
        n_elem = 1
        for d in shape:   # python ints: no silent overflow on absurd shapes
            n_elem *= d
        if n_elem * dt.itemsize != nbytes:
            raise FormatError(
                f"tensor {name!r}: shape {shape} wants {n_elem * dt.itemsize} bytes, "
                f"directory says {nbytes}")
        end = offset + nbytes
        if end > len(body):
            raise FormatError(f"truncated payload: tensor {name!r} ends at {end}, have {len(body)}")
        arrays[name] = np.frombuffer(body[offset:end], dtype=dt).reshape(shape).copy()

    spec = TensorSpec(shape=tuple(header["input"]["shape"]), dtype=header["input"]["dtype"])
    nodes = [_node_in(d) for d in header["nodes"]]

    if header["kind"] == "float":
        return Graph(spec, nodes, arrays)
    if header["kind"] == "quantized":
        qparams_w = {t["name"]: _qp_in(t["quant"]) for t in header["tensors"]}
        if any(qp is None for qp in qparams_w.values()):
            raise FormatError("quantized container has a tensor without quant params")
        deq = {name: (qparams_w[name].scale *
                      (arr.astype(np.float64) - qparams_w[name].zero_point)).astype(np.float32)
               for name, arr in arrays.items()}
        twin = Graph(spec, nodes, deq)
        return QuantizedGraph(
            float_twin=twin, qparams_w=qparams_w, qweights=arrays,
            qparams_act={k: _qp_in(v) for k, v in header["act_quant"].items()},
            input_qp=_qp_in(header["input_quant"]), bits=int(header.get("bits") or 8))
    raise FormatError(f"unknown graph kind {header['kind']!r}")
