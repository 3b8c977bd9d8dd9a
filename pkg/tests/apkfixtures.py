"""Synthetic APK builders shared by scanner, pipeline, and acceptance tests."""
from __future__ import annotations

import zipfile
from pathlib import Path

import numpy as np

from dlaudit.dexstrings import build_dex

FIXTURES = Path(__file__).parent / "fixtures"


def tflite_bytes() -> bytes:
    return (FIXTURES / "quantized_classifier.tflite").read_bytes()


def make_apk(path, entries: dict[str, bytes]) -> Path:
    path = Path(path)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for name, data in entries.items():
            zf.writestr(name, data)
    return path


def keystream_encrypt(data: bytes, seed: int = 99) -> bytes:
    """Stand-in for real ciphertext: XOR with a seeded keystream as long as
    the payload, so the byte histogram flattens like AES output would."""
    rng = np.random.default_rng(seed)
    key = rng.integers(0, 256, size=len(data), dtype=np.uint8)
    return (np.frombuffer(data, dtype=np.uint8) ^ key).tobytes()


def high_entropy_payload(n: int = 32768, seed: int = 7) -> bytes:
    """Synthetic float-weight blob, then keystream-encrypted."""
    rng = np.random.default_rng(seed)
    plain = rng.standard_normal(n // 4).astype("<f4").tobytes()
    return keystream_encrypt(plain, seed + 1)


def tflite_dex() -> bytes:
    """DEX whose string table carries the TFLite run-API tokens."""
    return build_dex([
        "Lorg/tensorflow/lite/NativeInterpreterWrapper;",
        "NativeInterpreterWrapper", "run", "Landroid/graphics/Bitmap;",
        "loadModel", "light_model.tflite",
    ])


NCNN_PARAM = (
    "7767517\n"
    "3 3\n"
    "Input            data   0 1 data\n"
    "Convolution      conv1  1 1 data conv1 0=4\n"
    "Softmax          prob   1 1 conv1 prob\n"
).encode()


def scanner_fixture_suite(root) -> dict[str, dict]:
    """At least ten synthetic APKs with known ground truth.

    Returns {apk_path: {"expect_frameworks": set, "expect_dl": bool,
                        "decoy": bool}} keyed for recall accounting.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    tfl = tflite_bytes()
    suite = {}

    def add(name, entries, frameworks, dl, decoy=False):
        p = make_apk(root / name, entries)
        suite[str(p)] = {"expect_frameworks": frameworks, "expect_dl": dl, "decoy": decoy}

    add("plain_tflite.apk", {"assets/model.tflite": tfl}, {"TFLite"}, True)
    add("renamed_magic.apk", {"assets/weights.dat": tfl}, {"TFLite"}, True)  # magic only
    add("ncnn_param.apk", {"assets/det.param": NCNN_PARAM, "assets/det.bin": b"\0" * 64},
        {"NCNN"}, True)
    add("suffix_only_lite.apk",
        {"assets/m.lite": high_entropy_payload(4096, 3),
         "lib/arm64-v8a/libtensorflowlite_jni.so": b"\x7fELF" + b"tensorflow" + b"\0" * 32},
        {"TFLite"}, True)
    add("encrypted_tflite.apk",
        {"assets/enc.tflite": keystream_encrypt(tfl + high_entropy_payload(30000, 5)),
         "lib/armeabi/libtensorflowlite.so": b"\x7fELF\0tensorflow\0",
         "classes.dex": tflite_dex()},
        {"TFLite"}, True)
    add("sensory_closed.apk",
        {"assets/spotter.model": high_entropy_payload(2048, 11),
         "lib/armeabi/libsmma.so": b"\x7fELF\0smma\0"},
        {"Sensory"}, True)
    add("caffe2_symbols.apk",
        {"lib/arm64-v8a/libxplat_caffe2.so": b"\x7fELF\0N3caffe2NetDefE\0",
         "assets/net.pb": tfl},  # pb suffix + TFL3 magic both fire
        {"Caffe2", "TFLite"}, True)
    add("zero_size_remote.apk",
        {"assets/thin.tflite": b"", "classes.dex": tflite_dex()},
        {"TFLite"}, True)
    add("decoy_metadata_pb.apk",
        {"assets/METADATA.pb": b"\n\x07config\x12\x03foo" * 4,
         "res/layout/a.xml": b"<xml/>"},
        set(), False, decoy=True)
    add("no_ml_app.apk",
        {"classes.dex": build_dex(["Landroid/app/Activity;", "onCreate"]),
         "res/drawable/icon.png": b"\x89PNG\r\n\x1a\n" + b"\0" * 16},
        set(), False)
    add("labelmap_sibling.apk",
        {"assets/classifier.tflite": tfl,
         "assets/labelmap.txt": b"red\ngreen\nyellow\n",
         "assets/LICENSE.txt": b"(c) nobody"},
        {"TFLite"}, True)
    add("mxnet_symbols.apk",
        {"lib/armeabi-v7a/libmxnet_predict.so": b"\x7fELF\0N5mxnet6EngineE\0"},
        {"MxNet"}, True)
    return suite
