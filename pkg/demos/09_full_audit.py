"""The whole pipeline end to end.

Assembles an audit bundle (an APK embedding a trained engine-format model
with a labelmap sidecar, an IR file describing how the app drives it, and the
labeled corpus), runs scan -> profile -> metadata -> dataset -> attack, and
prints the campaign table.
"""
import json
import zipfile

from dlaudit import minigraph as mg
from dlaudit.pipeline import PipelineConfig, emit_report, run_pipeline

from _common import CLASS_NAMES, WORKDIR, trained_classifier, write_corpus

WORKDIR.mkdir(exist_ok=True)
corpus_root = write_corpus(WORKDIR / "corpus")

print("training the embedded model ...")
graph = trained_classifier()
model_path = WORKDIR / "light_model.mg"
mg.save_graph(graph, model_path)

apk_path = WORKDIR / "light_app.apk"
with zipfile.ZipFile(apk_path, "w") as zf:
    zf.writestr("assets/light_model.mg", model_path.read_bytes())
    zf.writestr("assets/labelmap.txt", "\n".join(CLASS_NAMES) + "\n")
print(f"built {apk_path}")

ir_doc = {
    "ir_version": 1,
    "classes": [{"name": "LightClassifier", "super": "Object",
                 "fields": [{"name": "IMAGE_MEAN", "const_value": 127.5},
                            {"name": "IMAGE_STD", "const_value": 128.5}]}],
    "methods": [{
        "owner": "LightClassifier", "name": "recognize",
        "signature": "(Landroid/graphics/Bitmap;)V", "params": ["p0"],
        "statements": [
            {"id": 0, "kind": "const_string", "defs": ["v0"], "literal": "light_model.mg"},
            {"id": 1, "kind": "invoke", "target_method": "MiniGraph.load(String)",
             "defs": ["v1"], "uses": ["v0"]},
            {"id": 2, "kind": "invoke",
             "target_method": "Landroid/graphics/Bitmap;.createBitmap(Bitmap)",
             "defs": ["v2"], "uses": ["p0"]},
            {"id": 3, "kind": "invoke", "target_method": "MiniGraph.run(float[])",
             "defs": ["v3"], "uses": ["v1", "v2"]},
            {"id": 4, "kind": "switch", "uses": ["v3"]},
            {"id": 5, "kind": "branch", "uses": ["v3"], "literal": "red"},
            {"id": 6, "kind": "branch", "uses": ["v3"], "literal": "green"},
            {"id": 7, "kind": "branch", "uses": ["v3"], "literal": "yellow"},
        ]}],
}
ir_path = WORKDIR / "light_app.ir.json"
ir_path.write_text(json.dumps(ir_doc, indent=2))

config = PipelineConfig(
    apks=[str(apk_path)],
    ir_files={str(apk_path): str(ir_path)},
    corpus=str(corpus_root),
    out_dir=str(WORKDIR / "audit-out"),
    methods=["fgsm", "pgd", "cw", "nes"],
    attack={"epsilon": 0.25, "nes_pairs": 15, "query_budget": 4000},
    eps_sweep="0:0.02:0.005",
    samples_per_class=15,
    seed=7,
    include_timings=False,
)

print("\nrunning the audit ...")
report = run_pipeline(config)

print(f"\nerrors: {len(report.errors)}")
rec = report.models[0]
print(f"model {rec['content_hash'][:12]}...: type {rec['access_type']}, "
      f"difficulty '{rec['difficulty']}', executable={rec['executable']}")
print(f"profile: path={rec['profile']['model_path']!r}, "
      f"labels={rec['profile']['labels']}, task={rec['profile']['task']}")
print(f"labelmap coverage: {report.labelmaps[rec['content_hash']]['coverage']:.0%}")

print()
print(emit_report(report, "text-table").decode())
print(f"JSON report: {WORKDIR / 'audit-out' / 'report.json'}")
