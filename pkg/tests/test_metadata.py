"""Model file parsing against converter-written fixtures and hand-built cases."""
import json
from pathlib import Path

import numpy as np
import pytest

from dlaudit import metadata as md
from dlaudit import minigraph as mg
from fbwrite import build_tflite

FIXTURES = Path(__file__).parent / "fixtures"
# ground truth read back through the converting framework's own interpreter
EXPECTED = json.loads((FIXTURES / "tflite_expected.json").read_text())

_DTYPE_ALIASES = {"uint8": "u8", "int8": "i8", "float32": "f32", "float16": "f16", "int32": "i32"}


def _assert_matches_frozen(parsed_list, frozen_list):
    assert len(parsed_list) == len(frozen_list)
    for got, want in zip(parsed_list, frozen_list):
        assert got.shape == tuple(want["shape"])
        assert got.dtype == _DTYPE_ALIASES[want["dtype"]]
        if want["quant_scale"]:
            assert got.quant is not None
            assert got.quant.scale == pytest.approx(want["quant_scale"], rel=1e-7)
            assert got.quant.zero_point == want["quant_zero_point"]


@pytest.mark.parametrize("name", ["quantized_classifier", "float_classifier"])
def test_parse_tflite_io_matches_interpreter_ground_truth(name):
    meta = md.parse_tflite((FIXTURES / f"{name}.tflite").read_bytes())
    assert meta.format == "tflite"
    _assert_matches_frozen(meta.inputs, EXPECTED[name]["inputs"])
    _assert_matches_frozen(meta.outputs, EXPECTED[name]["outputs"])


def test_quantized_fixture_has_the_common_uint8_input_grid():
    meta = md.parse_tflite((FIXTURES / "quantized_classifier.tflite").read_bytes())
    t = meta.inputs[0]
    assert t.shape == (1, 224, 224, 3)
    assert t.dtype == "u8"
    assert t.quant.scale == pytest.approx(1.0 / 128.0)
    assert t.quant.zero_point == 128


def test_quant_roundtrip_error_bounded_for_parsed_params():
    meta = md.parse_tflite((FIXTURES / "quantized_classifier.tflite").read_bytes())
    qp = meta.inputs[0].quant
    rng = np.random.default_rng(0)
    x = rng.uniform(qp.scale * (0 - qp.zero_point), qp.scale * (255 - qp.zero_point), size=512)
    err = np.abs(x - mg.dequantize_tensor(mg.quantize_tensor(x, qp), qp).astype(np.float64))
    assert err.max() <= qp.scale / 2 + 1e-12


def test_pruned_fixture_detected_dense_fixture_not():
    pruned = md.parse_tflite((FIXTURES / "pruned_classifier.tflite").read_bytes())
    dense = md.parse_tflite((FIXTURES / "float_classifier.tflite").read_bytes())
    rp = md.detect_pruning(pruned)
    rd = md.detect_pruning(dense)
    # generator zeroed half of every keras array (frozen count confirms)
    assert EXPECTED["pruned_classifier"]["keras_zero_params"] * 2 >= \
        EXPECTED["pruned_classifier"]["keras_total_params"]
    assert rp.pruned and 0.40 <= rp.zero_ratio <= 0.60
    assert not rd.pruned and rd.zero_ratio < 0.10


def test_pruning_boundary_is_inclusive():
    meta = md.ModelMetadata(format="tflite", total_params=10, zero_params=4)
    assert md.detect_pruning(meta).pruned          # exactly 0.40
    meta.zero_params = 3
    assert not md.detect_pruning(meta).pruned


def test_pruning_with_no_weights_is_undefined_not_pruned():
    rep = md.detect_pruning(md.ModelMetadata(format="ncnn"))
    assert rep.pruned is False and rep.note


def test_parse_truncated_tflite_fails():
    data = (FIXTURES / "quantized_classifier.tflite").read_bytes()
    with pytest.raises(md.ModelParseError):
        md.parse_tflite(data[:200])


def test_parse_garbage_with_valid_magic_fails():
    data = b"\x00\x00\x00\x00TFL3" + b"\xff" * 64
    with pytest.raises(md.ModelParseError):
        md.parse_tflite(data)


# -- hand-built flatbuffers ------------------------------------------------------

def custom_op_model():
    w = np.full(6, 3, dtype=np.uint8).tobytes()
    return build_tflite(
        opcodes=[(32, "MaxPoolingWithArgmax2D"), (3, None)],
        tensors=[
            {"shape": [1, 4, 4, 1], "dtype": 3, "buffer": 0, "name": "input",
             "quant": (0.0078125, 128)},
            {"shape": [2, 3], "dtype": 3, "buffer": 1, "name": "w", "quant": (0.5, 2)},
            {"shape": [1, 2, 2, 1], "dtype": 3, "buffer": 0, "name": "out",
             "quant": (0.0039, 0)},
        ],
        inputs=[0], outputs=[2],
        operators=[(0, [0, 1], [2])],
        buffers=[b"", w],
    )


def test_custom_operator_inventoried_with_flag():
    meta = md.parse_tflite(custom_op_model())
    assert {"opcode_name": "MaxPoolingWithArgmax2D", "is_custom": True} in meta.operators


def test_hand_built_weight_scan_counts_exactly():
    meta = md.parse_tflite(custom_op_model())
    # the only scanned buffer holds six u8 values equal to 3
    assert meta.total_params == 6
    assert meta.zero_params == 0


def test_quant_only_attached_to_integer_tensors():
    data = build_tflite(
        opcodes=[(3, None)],
        tensors=[{"shape": [1, 2], "dtype": 0, "buffer": 0, "name": "fin",
                  "quant": (0.5, 0)},
                 {"shape": [1, 2], "dtype": 0, "buffer": 0, "name": "fout"}],
        inputs=[0], outputs=[1], operators=[(0, [0], [1])], buffers=[b""])
    meta = md.parse_tflite(data)
    assert meta.inputs[0].quant is None  # float tensor: quant fields ignored


def test_empty_subgraph_io_rejected():
    data = build_tflite(opcodes=[(3, None)],
                        tensors=[{"shape": [1], "dtype": 0, "buffer": 0, "name": "t"}],
                        inputs=[], outputs=[], operators=[], buffers=[b""])
    with pytest.raises(md.ModelParseError):
        md.parse_tflite(data)


# -- sniffing ---------------------------------------------------------------------

def test_sniff_formats():
    assert md.sniff_format(b"\x1c\x00\x00\x00TFL3\x00") == "tflite"
    assert md.sniff_format(b"7767517\n") == "ncnn"
    assert md.sniff_format(b"MGRF" + b"\x01\x00") == "minigraph"
    assert md.sniff_format(b"\x89PNG\r\n\x1a\n") == "unknown"
    assert md.sniff_format(np.random.default_rng(1).bytes(32)) == "unknown"


# -- ncnn --------------------------------------------------------------------------

NCNN_FIXTURE = """7767517
4 4
Input            data             0 1 data
Convolution      conv1            1 1 data conv1 0=10 1=3
ReLU             relu1            1 1 conv1 relu1
Softmax          prob             1 1 relu1 prob
"""


def test_parse_ncnn_param_layers():
    meta = md.parse_ncnn_param(NCNN_FIXTURE)
    assert meta.format == "ncnn"
    assert meta.layer_names == ["data", "conv1", "relu1", "prob"]
    assert [o["opcode_name"] for o in meta.operators] == ["Input", "Convolution", "ReLU", "Softmax"]
    assert [t.name for t in meta.inputs] == ["data"]
    assert [t.name for t in meta.outputs] == ["prob"]


def test_parse_ncnn_magic_only_is_valid_and_empty():
    meta = md.parse_ncnn_param("7767517\n")
    assert meta.layer_names == [] and meta.inputs == []


def test_parse_ncnn_layer_count_mismatch_rejected():
    bad = "7767517\n5 5\n" + "\n".join(NCNN_FIXTURE.splitlines()[2:5])
    with pytest.raises(md.ModelParseError) as err:
        md.parse_ncnn_param(bad)
    assert "5" in str(err.value)


def test_parse_ncnn_wrong_magic_rejected():
    with pytest.raises(md.ModelParseError):
        md.parse_ncnn_param("7767518\n1 1\nInput in 0 1 in\n")


# -- engine container -----------------------------------------------------------

def test_parse_minigraph_metadata(tmp_path):
    rng = np.random.default_rng(0)
    g = mg.Graph(mg.TensorSpec((4, 4, 1)), [
        mg.OpNode("c", "conv2d", ["input"], {"padding": "same"}, {"weight": "w", "bias": "b"}),
        mg.OpNode("f", "flatten", ["c"]),
        mg.OpNode("d", "dense", ["f"], {}, {"weight": "dw", "bias": "db"}),
    ], {"w": rng.standard_normal((3, 3, 1, 2)).astype(np.float32),
        "b": rng.standard_normal(2).astype(np.float32),
        "dw": rng.standard_normal((32, 2)).astype(np.float32),
        "db": rng.standard_normal(2).astype(np.float32)})
    p = tmp_path / "m.mg"
    mg.save_graph(g, p)
    meta = md.parse_model(p.read_bytes(), "m.mg")
    assert meta.format == "minigraph"
    assert meta.inputs[0].shape == (4, 4, 1)
    assert meta.layer_names == ["c", "f", "d"]
    assert meta.total_params == g.param_count()


# -- obfuscation ------------------------------------------------------------------

def test_layer_obfuscation_detection():
    assert md.detect_layer_obfuscation(["7cff058686c711e9a0ac4ccc6ac78afa:2",
                                        "8aef158686c711e9a0ac4ccc6ac78afb:1"])
    assert not md.detect_layer_obfuscation(["Conv2D", "AvgPool2D"])
    assert not md.detect_layer_obfuscation([])
    # half-or-more rule
    assert md.detect_layer_obfuscation(["Conv2D", "7cff058686c711e9a0ac4ccc6ac78afa"])
    assert not md.detect_layer_obfuscation(["Conv2D", "Dense", "7cff058686c711e9a0ac4ccc6ac78afa"])
