"""Reading model files without executing them.

Walks the committed converter-written model fixtures: tensor shapes and
dtypes, quantization parameters, the operator inventory, pruning and
layer-name obfuscation indicators. Also shows the text-format topology parser.
"""
from pathlib import Path

from dlaudit import metadata as md

FIXTURES = Path(__file__).parent.parent / "tests" / "fixtures"

for name in ("quantized_classifier", "float_classifier", "pruned_classifier"):
    data = (FIXTURES / f"{name}.tflite").read_bytes()
    print(f"\n== {name}.tflite ({len(data)} bytes, sniff: {md.sniff_format(data[:8])})")
    meta = md.parse_tflite(data)
    t = meta.inputs[0]
    print(f"  input:  {t.name}  shape {t.shape}  dtype {t.dtype}"
          + (f"  quant scale={t.quant.scale} zero_point={t.quant.zero_point}"
             if t.quant else ""))
    t = meta.outputs[0]
    print(f"  output: shape {t.shape}  dtype {t.dtype}")
    print(f"  operators: {[o['opcode_name'] for o in meta.operators]}")
    pr = md.detect_pruning(meta)
    print(f"  weights: {meta.total_params} scanned, zero ratio {pr.zero_ratio:.2f} "
          f"-> pruned: {pr.pruned}")

print("\n== text-format topology (param file)")
param = """7767517
4 4
Input            data   0 1 data
Convolution      conv1  1 1 data conv1 0=10
ReLU             relu1  1 1 conv1 relu1
Softmax          prob   1 1 relu1 prob
"""
meta = md.parse_ncnn_param(param)
print(f"  layers: {meta.layer_names}")
print(f"  inputs: {[t.name for t in meta.inputs]}, outputs: {[t.name for t in meta.outputs]}")

print("\n== layer-name obfuscation")
plain = ["Conv2D", "AvgPool2D", "Dense"]
obfuscated = ["7cff058686c711e9a0ac4ccc6ac78afa:2", "8aef158686c711e9a0ac4ccc6ac78afb:1"]
print(f"  {plain} -> {md.detect_layer_obfuscation(plain)}")
print(f"  {obfuscated} -> {md.detect_layer_obfuscation(obfuscated)}")
