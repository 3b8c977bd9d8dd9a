#!/usr/bin/env python3
"""Generate the committed TFLite test fixtures with the TensorFlow converter,
then read the ground truth back through tf.lite.Interpreter and freeze it as
JSON next to the binaries.

The test suite never imports TensorFlow: it parses the committed .tflite
bytes with dlaudit's own reader and compares against the frozen JSON. Re-run
this script only to regenerate the fixtures.

Usage: python3 tools/make_tflite_fixture.py [out_dir]
"""
import json
import sys
from pathlib import Path

import numpy as np
import tensorflow as tf

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures")


def build_model():
    inp = tf.keras.Input(shape=(224, 224, 3))
    x = tf.keras.layers.Conv2D(4, 3, strides=8, activation="relu")(inp)
    x = tf.keras.layers.GlobalAveragePooling2D()(x)
    out = tf.keras.layers.Dense(3, activation="softmax")(x)
    return tf.keras.Model(inp, out)


def rep_data():
    rng = np.random.default_rng(0)
    for _ in range(8):
        # span exactly [-1, 127/128] so the input grid nudges to scale=1/128, zp=128
        a = rng.uniform(-1.0, 0.9921875, size=(1, 224, 224, 3)).astype(np.float32)
        a.flat[0] = -1.0
        a.flat[1] = 0.9921875
        yield [a]


def quantized_fixture():
    conv = tf.lite.TFLiteConverter.from_keras_model(build_model())
    conv.optimizations = [tf.lite.Optimize.DEFAULT]
    conv.representative_dataset = rep_data
    conv.target_spec.supported_ops = [tf.lite.OpsSet.TFLITE_BUILTINS_INT8]
    conv.inference_input_type = tf.uint8
    conv.inference_output_type = tf.uint8
    return conv.convert()


def float_fixture():
    conv = tf.lite.TFLiteConverter.from_keras_model(build_model())
    return conv.convert()


def pruned_fixture():
    # zero out half of every kernel, then convert without quantization
    model = build_model()
    for layer in model.layers:
        ws = layer.get_weights()
        if not ws:
            continue
        new = []
        for w in ws:
            flat = w.reshape(-1)
            flat[: flat.size // 2] = 0.0
            new.append(flat.reshape(w.shape))
        layer.set_weights(new)
    conv = tf.lite.TFLiteConverter.from_keras_model(model)
    return conv.convert(), model


def keras_weight_stats(model) -> dict:
    total = zero = 0
    for w in model.get_weights():
        total += int(w.size)
        zero += int((np.abs(w) < 1e-9).sum())
    return {"keras_total_params": total, "keras_zero_params": zero}


def describe(blob: bytes) -> dict:
    interp = tf.lite.Interpreter(model_content=blob)
    interp.allocate_tensors()

    def tensor_desc(d):
        scale, zp = d["quantization"]
        return {
            "name": d["name"],
            "shape": [int(v) for v in d["shape"]],
            "dtype": np.dtype(d["dtype"]).name,
            "quant_scale": float(scale),
            "quant_zero_point": int(zp),
        }

    total = zero = 0
    for det in interp.get_tensor_details():
        try:
            t = interp.tensor(det["index"])()
        except ValueError:
            continue
        if t.size == 0:
            continue
        total += int(t.size)
        if np.issubdtype(t.dtype, np.floating):
            zero += int((np.abs(t) < 1e-9).sum())
        else:
            zero += int((t == 0).sum())

    return {
        "size_bytes": len(blob),
        "inputs": [tensor_desc(d) for d in interp.get_input_details()],
        "outputs": [tensor_desc(d) for d in interp.get_output_details()],
        "interpreter_total_params": total,
        "interpreter_zero_params": zero,
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    frozen = {"tensorflow_version": tf.__version__}
    for name, maker in [("quantized_classifier", quantized_fixture),
                        ("float_classifier", float_fixture),
                        ("pruned_classifier", pruned_fixture)]:
        made = maker()
        blob, model = made if isinstance(made, tuple) else (made, None)
        (OUT / f"{name}.tflite").write_bytes(blob)
        frozen[name] = describe(blob)
        if model is not None:
            frozen[name].update(keras_weight_stats(model))
        print(name, len(blob), "bytes")
    (OUT / "tflite_expected.json").write_text(json.dumps(frozen, indent=2, sort_keys=True) + "\n")
    print("wrote", OUT / "tflite_expected.json")


if __name__ == "__main__":
    main()
