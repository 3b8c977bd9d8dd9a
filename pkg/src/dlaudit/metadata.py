"""Read-only model file parsing: tensors, shapes, quantization parameters,
operator inventory, and optimization/obfuscation indicators.

Nothing here executes a model. TFLite files are walked directly at the
FlatBuffer level; NCNN topology comes from the text param file; the engine's
own container is read through its header.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .flatbuf import FlatBufferError, Reader
from .minigraph.fileio import MAGIC as MINIGRAPH_MAGIC, read_header
from .minigraph.graph import QuantParams

TFLITE_MAGIC = b"TFL3"       # at bytes 4..8 (FlatBuffer file identifier slot)
NCNN_MAGIC = b"7767517"      # leading token of the param text format

PRUNING_ZERO_RATIO = 0.40
FLOAT_ZERO_EPS = 1e-9


class ModelParseError(Exception):
    """File claimed a known format but could not be walked."""


@dataclass
class TensorInfo:
    name: str
    shape: tuple[int, ...]          # -1 marks dynamic dims
    dtype: str                       # f32 | f16 | u8 | i8 | i32 | typeN
    quant: QuantParams | None = None

    def to_dict(self):
        d = {"name": self.name, "shape": list(self.shape), "dtype": self.dtype}
        d["quant"] = None if self.quant is None else {
            "scale": self.quant.scale, "zero_point": self.quant.zero_point}
        return d


@dataclass
class ModelMetadata:
    format: str                      # tflite | ncnn | minigraph | unknown
    inputs: list[TensorInfo] = field(default_factory=list)
    outputs: list[TensorInfo] = field(default_factory=list)
    operators: list[dict] = field(default_factory=list)   # {opcode_name, is_custom}
    total_params: int = 0
    zero_params: int = 0
    layer_names: list[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "format": self.format,
            "inputs": [t.to_dict() for t in self.inputs],
            "outputs": [t.to_dict() for t in self.outputs],
            "operators": self.operators,
            "weight_stats": {"total_params": self.total_params, "zero_params": self.zero_params},
            "layer_names": self.layer_names,
        }


@dataclass
class PruningReport:
    pruned: bool
    zero_ratio: float
    note: str = ""


def sniff_format(head: bytes, name: str = "") -> str:
    """Cheap fingerprint from the first bytes of a file."""
    if len(head) >= 8 and head[4:8] == TFLITE_MAGIC:
        return "tflite"
    if head.lstrip()[:len(NCNN_MAGIC)] == NCNN_MAGIC:
        return "ncnn"
    if head[:4] == MINIGRAPH_MAGIC:
        return "minigraph"
    return "unknown"


# -- TFLite -------------------------------------------------------------------

# TensorType enum values that matter for this toolkit
_TFLITE_DTYPES = {0: "f32", 1: "f16", 2: "i32", 3: "u8", 4: "i64", 6: "bool", 7: "i16", 9: "i8"}
_DTYPE_WIDTH = {"f32": 4, "f16": 2, "i32": 4, "u8": 1, "i64": 8, "bool": 1, "i16": 2, "i8": 1}

_BUILTIN_NAMES = {
    0: "ADD", 1: "AVERAGE_POOL_2D", 2: "CONCATENATION", 3: "CONV_2D",
    4: "DEPTHWISE_CONV_2D", 5: "DEPTH_TO_SPACE", 6: "DEQUANTIZE",
    7: "EMBEDDING_LOOKUP", 8: "FLOOR", 9: "FULLY_CONNECTED", 10: "HASHTABLE_LOOKUP",
    11: "L2_NORMALIZATION", 12: "L2_POOL_2D", 13: "LOCAL_RESPONSE_NORMALIZATION",
    14: "LOGISTIC", 15: "LSH_PROJECTION", 16: "LSTM", 17: "MAX_POOL_2D", 18: "MUL",
    19: "RELU", 20: "RELU_N1_TO_1", 21: "RELU6", 22: "RESHAPE", 23: "RESIZE_BILINEAR",
    24: "RNN", 25: "SOFTMAX", 26: "SPACE_TO_DEPTH", 27: "SVDF", 28: "TANH",
    29: "CONCAT_EMBEDDINGS", 30: "SKIP_GRAM", 31: "CALL", 32: "CUSTOM",
    33: "EMBEDDING_LOOKUP_SPARSE", 34: "PAD", 35: "UNIDIRECTIONAL_SEQUENCE_RNN",
    36: "GATHER", 37: "BATCH_TO_SPACE_ND", 38: "SPACE_TO_BATCH_ND", 39: "TRANSPOSE",
    40: "MEAN", 41: "SUB", 42: "DIV", 43: "SQUEEZE", 44: "UNIDIRECTIONAL_SEQUENCE_LSTM",
    45: "STRIDED_SLICE", 46: "BIDIRECTIONAL_SEQUENCE_RNN", 47: "EXP", 48: "TOPK_V2",
    49: "SPLIT", 50: "LOG_SOFTMAX", 51: "DELEGATE", 52: "BIDIRECTIONAL_SEQUENCE_LSTM",
    53: "CAST", 54: "PRELU", 55: "MAXIMUM", 56: "ARG_MAX", 57: "MINIMUM", 58: "LESS",
    59: "NEG", 60: "PADV2", 61: "GREATER", 62: "GREATER_EQUAL", 63: "LESS_EQUAL",
    64: "SELECT", 65: "SLICE", 66: "SIN", 67: "TRANSPOSE_CONV", 68: "SPARSE_TO_DENSE",
    69: "TILE", 70: "EXPAND_DIMS", 71: "EQUAL", 72: "NOT_EQUAL", 73: "LOG", 74: "SUM",
    75: "SQRT", 76: "RSQRT", 77: "SHAPE", 78: "POW", 79: "ARG_MIN", 80: "FAKE_QUANT",
    81: "REDUCE_PROD", 82: "REDUCE_MAX", 83: "PACK", 84: "LOGICAL_OR", 85: "ONE_HOT",
    86: "LOGICAL_AND", 87: "LOGICAL_NOT", 88: "UNPACK", 89: "REDUCE_MIN", 90: "FLOOR_DIV",
    91: "REDUCE_ANY", 92: "SQUARE", 93: "ZEROS_LIKE", 94: "FILL", 95: "FLOOR_MOD",
    96: "RANGE", 97: "RESIZE_NEAREST_NEIGHBOR", 98: "LEAKY_RELU", 99: "SQUARED_DIFFERENCE",
    100: "MIRROR_PAD", 101: "ABS", 102: "SPLIT_V", 103: "UNIQUE", 104: "CEIL",
    105: "REVERSE_V2", 106: "ADD_N", 107: "GATHER_ND", 108: "COS", 109: "WHERE",
    110: "RANK", 111: "ELU", 112: "REVERSE_SEQUENCE", 113: "MATRIX_DIAG", 114: "QUANTIZE",
    115: "MATRIX_SET_DIAG", 116: "ROUND", 117: "HARD_SWISH", 118: "IF", 119: "WHILE",
    120: "NON_MAX_SUPPRESSION_V4", 121: "NON_MAX_SUPPRESSION_V5", 122: "SCATTER_ND",
    123: "SELECT_V2", 124: "DENSIFY", 125: "SEGMENT_SUM", 126: "BATCH_MATMUL",
}
_CUSTOM_OPCODE = 32


def _tensor_info(r: Reader, tpos: int) -> TensorInfo:
    shape = r.vector_scalars(tpos, 0, "i32", 4) or []
    dtype_code = r.scalar(tpos, 1, "i8", 0)
    dtype = _TFLITE_DTYPES.get(dtype_code, f"type{dtype_code}")
    name = r.string(tpos, 3) or ""
    quant = None
    qpos = r.indirect(tpos, 4)
    if qpos is not None:
        scales = r.vector_scalars(qpos, 2, "f32", 4)
        zps = r.vector_scalars(qpos, 3, "i64", 8)
        if scales and scales[0] > 0 and dtype in ("u8", "i8", "i32", "i16"):
            quant = QuantParams(scale=float(scales[0]),
                                zero_point=int(zps[0]) if zps else 0)
    return TensorInfo(name=name, shape=tuple(shape), dtype=dtype, quant=quant)


def parse_tflite(data: bytes) -> ModelMetadata:
    """Structural walk of a TFLite FlatBuffer: subgraph 0 I/O tensors, opcode
    inventory, and a weight scan over buffer payloads."""
    if sniff_format(data[:8]) != "tflite":
        raise ModelParseError("missing TFL3 file identifier")
    r = Reader(data)
    try:
        model = r.root()
        opcode_tables = r.vector_tables(model, 1) or []
        opcodes = []
        for ot in opcode_tables:
            deprecated = r.scalar(ot, 0, "i8", 0)
            builtin = r.scalar(ot, 3, "i32", deprecated)
            code = max(builtin, deprecated)
            if code == _CUSTOM_OPCODE:
                opcodes.append({"opcode_name": r.string(ot, 1) or "CUSTOM", "is_custom": True})
            else:
                opcodes.append({"opcode_name": _BUILTIN_NAMES.get(code, f"BUILTIN_{code}"),
                                "is_custom": False})

        subgraphs = r.vector_tables(model, 2)
        if not subgraphs:
            raise ModelParseError("no subgraphs")
        sg = subgraphs[0]
        tensor_tables = r.vector_tables(sg, 0) or []
        tensors = [_tensor_info(r, t) for t in tensor_tables]
        in_ids = r.vector_scalars(sg, 1, "i32", 4) or []
        out_ids = r.vector_scalars(sg, 2, "i32", 4) or []
        if not in_ids or not out_ids:
            raise ModelParseError("subgraph has no declared inputs/outputs")

        used = set()
        op_tables = r.vector_tables(sg, 3) or []
        for op in op_tables:
            idx = r.scalar(op, 0, "u32", 0)
            if idx < len(opcodes):
                used.add(idx)
        operators = [opcodes[i] for i in sorted(used)] if used else opcodes

        buffers = r.vector_tables(model, 4) or []
        total = zero = 0
        for t_table, info in zip(tensor_tables, tensors):
            buf_idx = r.scalar(t_table, 2, "u32", 0)
            if buf_idx == 0 or buf_idx >= len(buffers):
                continue
            raw = r.vector_bytes(buffers[buf_idx], 0)
            if not raw:
                continue
            width = _DTYPE_WIDTH.get(info.dtype)
            n_elem = abs(int(np.prod(info.shape))) if info.shape else 0
            if width is None or n_elem == 0 or len(raw) != n_elem * width:
                continue
            total += n_elem
            if info.dtype == "f32":
                vals = np.frombuffer(raw, dtype="<f4")
                zero += int((np.abs(vals) < FLOAT_ZERO_EPS).sum())
            elif info.dtype in ("u8", "i8", "i16", "i32", "i64"):
                np_dt = {"u8": "u1", "i8": "i1", "i16": "<i2", "i32": "<i4", "i64": "<i8"}[info.dtype]
                vals = np.frombuffer(raw, dtype=np_dt)
                zero += int((vals == 0).sum())
    except FlatBufferError as exc:
        raise ModelParseError(f"malformed flatbuffer: {exc}") from exc

    def pick(ids):
        out = []
        for i in ids:
            if not 0 <= i < len(tensors):
                raise ModelParseError(f"tensor id {i} out of range")
            out.append(tensors[i])
        return out

    return ModelMetadata(
        format="tflite",
        inputs=pick(in_ids), outputs=pick(out_ids),
        operators=operators,
        total_params=total, zero_params=zero,
        layer_names=[t.name for t in tensors if t.name],
    )


# -- NCNN ---------------------------------------------------------------------

def parse_ncnn_param(text: str) -> ModelMetadata:
    """Topology from an NCNN param file: magic line, count line, layer records.
    Shapes stay unknown; the weights live in the separate bin file."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].split()[0] != NCNN_MAGIC.decode():
        raise ModelParseError("missing ncnn magic line")
    if len(lines) == 1:
        return ModelMetadata(format="ncnn")
    counts = lines[1].split()
    if len(counts) < 2 or not counts[0].lstrip("-").isdigit():
        raise ModelParseError(f"bad layer count line: {lines[1]!r}")
    declared = int(counts[0])
    records = lines[2:]
    if len(records) != declared:
        raise ModelParseError(f"declared {declared} layers but found {len(records)}")
    layer_names, operators, inputs, outputs = [], [], [], []
    seen_ops = set()
    produced, consumed = [], set()
    for ln in records:
        parts = ln.split()
        if len(parts) < 4:
            raise ModelParseError(f"short layer record: {ln!r}")
        try:
            ltype, lname, n_in, n_out = parts[0], parts[1], int(parts[2]), int(parts[3])
        except ValueError as exc:
            raise ModelParseError(f"bad blob counts in layer record {ln!r}") from exc
        if n_in < 0 or n_out < 0:
            raise ModelParseError(f"negative blob count in layer record {ln!r}")
        blobs = parts[4:4 + n_in + n_out]
        if len(blobs) < n_in + n_out:
            raise ModelParseError(f"layer {lname!r} declares more blobs than present")
        consumed.update(blobs[:n_in])
        produced.extend(blobs[n_in:n_in + n_out])
        layer_names.append(lname)
        if ltype not in seen_ops:
            seen_ops.add(ltype)
            operators.append({"opcode_name": ltype, "is_custom": False})
        if ltype == "Input":
            inputs.extend(TensorInfo(name=b, shape=(-1,), dtype="f32") for b in blobs[n_in:])
    outputs = [TensorInfo(name=b, shape=(-1,), dtype="f32")
               for b in produced if b not in consumed]
    return ModelMetadata(format="ncnn", inputs=inputs, outputs=outputs,
                         operators=operators, layer_names=layer_names)


# -- engine container -----------------------------------------------------------

def parse_minigraph(data: bytes) -> ModelMetadata:
    from .minigraph.fileio import FormatError
    try:
        header = read_header(data)
    except FormatError as exc:
        raise ModelParseError(str(exc)) from exc
    spec = header["input"]
    nodes = header["nodes"]
    total = zero = 0
    quant_in = header.get("input_quant")
    for t in header["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 0
        total += n
    inp = TensorInfo(name="input", shape=tuple(spec["shape"]),
                     dtype="u8" if header["kind"] == "quantized" else spec["dtype"],
                     quant=None if not quant_in else QuantParams(
                         scale=quant_in["scale"], zero_point=quant_in["zero_point"]))
    out = TensorInfo(name=nodes[-1]["name"], shape=(-1,), dtype="f32")
    ops_seen, operators = set(), []
    for nd in nodes:
        if nd["op"] not in ops_seen:
            ops_seen.add(nd["op"])
            operators.append({"opcode_name": nd["op"], "is_custom": False})
    return ModelMetadata(format="minigraph", inputs=[inp], outputs=[out],
                         operators=operators, total_params=total,
                         layer_names=[nd["name"] for nd in nodes])


def parse_model(data: bytes, name: str = "") -> ModelMetadata:
    """Dispatch on the sniffed format; raises ModelParseError when nothing fits
    or the claimed format cannot be walked (that failure drives access typing)."""
    fmt = sniff_format(data[:64], name)
    if fmt == "tflite":
        return parse_tflite(data)
    if fmt == "ncnn":
        try:
            return parse_ncnn_param(data.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise ModelParseError(f"ncnn param not text: {exc}") from exc
    if fmt == "minigraph":
        return parse_minigraph(data)
    raise ModelParseError("unrecognized model format")


# -- optimization indicators -----------------------------------------------------

def detect_pruning(meta: ModelMetadata, threshold: float = PRUNING_ZERO_RATIO) -> PruningReport:
    if meta.total_params == 0:
        return PruningReport(pruned=False, zero_ratio=0.0,
                             note="no weights scanned; ratio undefined")
    ratio = meta.zero_params / meta.total_params
    return PruningReport(pruned=ratio >= threshold, zero_ratio=ratio)


_HEX_ID = re.compile(r"(?:[0-9a-f]{16,}|[0-9a-f]{8}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{4}-[0-9a-f]{12})",
                     re.IGNORECASE)


def detect_layer_obfuscation(layer_names: list[str]) -> bool:
    """True when at least half the layer names look like opaque hex/UUID ids."""
    if not layer_names:
        return False
    hits = sum(1 for n in layer_names if _HEX_ID.search(n))
    return hits >= (len(layer_names) + 1) // 2
