"""Recovering a model's interface from app code.

Feeds a small IR program (the JSON encoding documented in the README) through
the reasoner: find the inference call site, walk backward to the model file
and the input source, walk forward to the switch that interprets the output,
and pull the normalization constants out of the enclosing class.
"""
import json

from dlaudit import ir as irmod
from dlaudit import reasoner as rz
from dlaudit.apkscan import default_ruleset

from _common import WORKDIR

IR = {
    "ir_version": 1,
    "classes": [
        {"name": "LightClassifier", "super": "Object",
         "fields": [{"name": "IMAGE_MEAN", "const_value": 127.5},
                    {"name": "IMAGE_STD", "const_value": 128.5}]},
        {"name": "ResultHandler", "super": "Object"},
    ],
    "methods": [
        {"owner": "LightClassifier", "name": "recognize",
         "signature": "(Landroid/graphics/Bitmap;)V", "params": ["p0"],
         "statements": [
             {"id": 0, "kind": "const_string", "defs": ["v0"], "literal": "light_model.tflite"},
             {"id": 1, "kind": "invoke", "target_method": "Interpreter.<init>(MappedByteBuffer)",
              "defs": ["v1"], "uses": ["v0"]},
             {"id": 2, "kind": "invoke",
              "target_method": "Landroid/graphics/Bitmap;.createBitmap(Bitmap)",
              "defs": ["v3"], "uses": ["p0"]},
             {"id": 3, "kind": "invoke", "target_method": "LightClassifier.preprocess(Bitmap)",
              "defs": ["v4"], "uses": ["v3"]},
             {"id": 4, "kind": "invoke",
              "target_method": "NativeInterpreterWrapper.run(Object[])",
              "defs": ["v5"], "uses": ["v1", "v4"]},
             {"id": 5, "kind": "invoke",
              "target_method": "ResultHandler.switchHandle(Tensor[])", "uses": ["v5"]},
         ]},
        {"owner": "LightClassifier", "name": "preprocess",
         "signature": "(Landroid/graphics/Bitmap;)[F", "params": ["p0"],
         "statements": [
             {"id": 0, "kind": "invoke", "target_method": "ImageOps.resizeBitmap(Bitmap, int, int)",
              "defs": ["v0"], "uses": ["p0"]},
             {"id": 1, "kind": "assign", "defs": ["v1"], "uses": ["v0"],
              "literal": "(((pix >> 16) & 255) - IMAGE_MEAN) / IMAGE_STD"},
             {"id": 2, "kind": "return", "uses": ["v1"]},
         ]},
        {"owner": "ResultHandler", "name": "switchHandle",
         "signature": "([LTensor;)V", "params": ["p0"],
         "statements": [
             {"id": 0, "kind": "switch", "uses": ["p0"]},
             {"id": 1, "kind": "branch", "uses": ["p0"], "literal": "red"},
             {"id": 2, "kind": "branch", "uses": ["p0"], "literal": "green"},
             {"id": 3, "kind": "branch", "uses": ["p0"], "literal": "yellow"},
         ]},
    ],
}

program = irmod.parse_program(IR)
iccg = irmod.build_iccg(program)
print(f"program: {len(program.methods)} methods, {len(iccg.edges)} call edges")

sites = rz.find_mis(program, default_ruleset())
print(f"\ninference sites found: {len(sites)}")
mis = sites[0]
print(f"  {mis.framework} call in {mis.method_key}")
print(f"  bindings: model={mis.m}, input={mis.i}, output={mis.o}")

rules = rz.default_reasoning_ruleset()
binding = rz.trace_model_binding(mis, iccg, program)
print(f"\nbackward from the model variable -> {binding.path!r}")

inp = rz.trace_input_source(mis, iccg, program, rules)
print(f"backward from the input variable -> modality {inp.modality} "
      f"(source API {inp.source_api})")

out = rz.trace_output_handler(mis, iccg, program, rules)
print(f"forward from the output variable -> handler {out.handler}, "
      f"labels {out.labels}")

pre = rz.extract_preprocessing(inp.slice, program, rules)
print(f"preprocessing constants: mean={pre.mean} std={pre.std} "
      f"(shift-and-mask unpacking: {pre.pixel_unpack_shift_mask})")

profile = rz.profile_program(program, iccg, default_ruleset(), rules)[0]
print(f"\nassembled profile: task={profile.task}, label origin={profile.label_origin}")
WORKDIR.mkdir(exist_ok=True)
(WORKDIR / "profile.json").write_text(json.dumps(profile.to_dict(), indent=2, sort_keys=True))
print(f"full profile written to {WORKDIR / 'profile.json'}")
