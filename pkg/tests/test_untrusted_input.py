"""Parsers face attacker-controlled bytes from inside APKs: random mutations,
truncations, and garbage must surface as clean parse errors, never as raw
IndexError/ValueError/struct.error crashes or hangs."""
from pathlib import Path

import numpy as np
import pytest

from dlaudit import metadata as md
from dlaudit import minigraph as mg
from dlaudit.dexstrings import DexError, build_dex, parse_dex_strings

FIXTURES = Path(__file__).parent / "fixtures"


def mutate(data: bytes, rng: np.random.Generator) -> bytes:
    buf = bytearray(data)
    mode = rng.integers(0, 3)
    if mode == 0 and len(buf) > 1:          # flip a few random bytes
        for _ in range(int(rng.integers(1, 8))):
            buf[int(rng.integers(0, len(buf)))] = int(rng.integers(0, 256))
    elif mode == 1:                          # truncate
        buf = buf[: int(rng.integers(0, len(buf)))]
    else:                                    # splice garbage into the middle
        pos = int(rng.integers(0, len(buf)))
        buf[pos:pos] = rng.bytes(int(rng.integers(1, 64)))
    return bytes(buf)


def test_tflite_parser_survives_mutations():
    base = (FIXTURES / "quantized_classifier.tflite").read_bytes()
    rng = np.random.default_rng(0)
    outcomes = {"ok": 0, "error": 0}
    for _ in range(300):
        blob = mutate(base, rng)
        try:
            md.parse_model(blob, "m.tflite")
            outcomes["ok"] += 1
        except md.ModelParseError:
            outcomes["error"] += 1
    assert sum(outcomes.values()) == 300  # nothing else escaped


def test_minigraph_loader_survives_mutations(tmp_path):
    g = mg.Graph(mg.TensorSpec((4, 4, 1)), [
        mg.OpNode("f", "flatten", ["input"]),
        mg.OpNode("d", "dense", ["f"], {}, {"weight": "w", "bias": "b"}),
    ], {"w": np.random.default_rng(0).standard_normal((16, 2)).astype(np.float32),
        "b": np.zeros(2, dtype=np.float32)})
    p = tmp_path / "m.mg"
    mg.save_graph(g, p)
    base = p.read_bytes()
    rng = np.random.default_rng(1)
    for i in range(300):
        (tmp_path / "x.mg").write_bytes(mutate(base, rng))
        try:
            mg.load_graph(tmp_path / "x.mg")
        except mg.GraphError:
            pass  # FormatError / ShapeError are both GraphError subclasses


def test_dex_string_parser_survives_mutations():
    base = build_dex(["NativeInterpreterWrapper", "run", "loadModel", "x" * 40])
    rng = np.random.default_rng(2)
    for _ in range(300):
        blob = mutate(base, rng)
        try:
            strings = parse_dex_strings(blob)
            assert isinstance(strings, list)
        except DexError:
            pass


def test_ncnn_parser_survives_text_garbage():
    rng = np.random.default_rng(3)
    base = "7767517\n3 3\nInput a 0 1 a\nConvolution b 1 1 a b\nSoftmax c 1 1 b c\n"
    for _ in range(200):
        text = "".join(chr(int(rng.integers(32, 127))) if rng.random() < 0.05 else ch
                       for ch in base)
        try:
            md.parse_ncnn_param(text)
        except md.ModelParseError:
            pass


def test_random_bytes_never_crash_the_dispatcher():
    rng = np.random.default_rng(4)
    for _ in range(200):
        blob = rng.bytes(int(rng.integers(0, 512)))
        try:
            md.parse_model(blob, "anything.bin")
        except md.ModelParseError:
            pass


def crafted_container(tmp_path, mutate_header):
    """Rebuild a valid engine container with a hostile header tweak."""
    import json
    import struct
    g = mg.Graph(mg.TensorSpec((4,)),
                 [mg.OpNode("d", "dense", ["input"], {}, {"weight": "w", "bias": "b"})],
                 {"w": np.zeros((4, 2), dtype=np.float32),
                  "b": np.zeros(2, dtype=np.float32)})
    p = tmp_path / "h.mg"
    mg.save_graph(g, p)
    raw = p.read_bytes()
    hlen = struct.unpack_from("<I", raw, 6)[0]
    header = json.loads(raw[10:10 + hlen])
    payload = raw[10 + hlen:]
    mutate_header(header)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    bad = tmp_path / "bad.mg"
    bad.write_bytes(raw[:4] + struct.pack("<HI", 1, len(blob)) + blob + payload)
    return bad


@pytest.mark.parametrize("name,tweak", [
    ("shape_nbytes_mismatch", lambda h: h["tensors"][0].update(shape=[400, 400])),
    ("negative_offset", lambda h: h["tensors"][0].update(offset=-8)),
    ("huge_shape", lambda h: h["tensors"][0].update(shape=[2 ** 40])),
    ("overflowing_shape", lambda h: h["tensors"][0].update(shape=[2 ** 62, 2 ** 62, 16])),
    ("string_nbytes", lambda h: h["tensors"][0].update(nbytes="lots")),
    ("unknown_op", lambda h: h["nodes"][0].update(op="teleport")),
    ("missing_param", lambda h: h["nodes"][0].update(params={})),
])
def test_crafted_container_headers_fail_cleanly(tmp_path, name, tweak):
    bad = crafted_container(tmp_path, tweak)
    with pytest.raises(mg.GraphError):
        mg.load_graph(bad)


def test_crafted_flatbuffer_vector_length_bounded():
    # a table whose vector claims 2^31 elements must fail the bounds check,
    # not loop for minutes
    import struct
    from dlaudit.flatbuf import FlatBufferError, Reader
    base = (FIXTURES / "quantized_classifier.tflite").read_bytes()
    r = Reader(base)
    model = r.root()
    pos = r.field_pos(model, 2)          # subgraph vector offset slot
    target = pos + r.u32(pos)
    blob = bytearray(base)
    struct.pack_into("<I", blob, target, 0x7FFFFFFF)
    with pytest.raises(md.ModelParseError):
        md.parse_tflite(bytes(blob))
