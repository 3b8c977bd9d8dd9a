"""Scanning an APK for on-device models.

Builds a synthetic APK containing a model file with a recognizable file
identifier, a native inference library, and a decoy protobuf, then shows how
the scanner classifies each entry and why the decoy is gated out.
"""
import zipfile

from dlaudit import apkscan as sc
from dlaudit.dexstrings import build_dex

from _common import WORKDIR

WORKDIR.mkdir(exist_ok=True)
apk_path = WORKDIR / "demo_app.apk"

# a stub with the file identifier at bytes 4..8 but no parseable structure:
# the scanner will treat it like a protected model (type B), since the
# loader code is present but the bytes refuse a structural parse
model_bytes = b"\x1c\x00\x00\x00TFL3" + bytes(64)
dex_bytes = build_dex(["NativeInterpreterWrapper", "run", "loadModel"])

with zipfile.ZipFile(apk_path, "w") as zf:
    zf.writestr("assets/classifier.tflite", model_bytes)
    zf.writestr("assets/labelmap.txt", "cat\ndog\n")
    zf.writestr("assets/METADATA.pb", b"\n\x07not a model")
    zf.writestr("lib/arm64-v8a/libtensorflowlite_jni.so", b"\x7fELF tensorflow")
    zf.writestr("classes.dex", dex_bytes)
print(f"built {apk_path}")

ruleset = sc.default_ruleset()
print(f"ruleset: {len(ruleset.rules)} framework rules "
      f"({', '.join(r.framework_name for r in ruleset.rules[:6])}, ...)")

report = sc.scan_apk(apk_path, ruleset)
print(f"\nDL app verdict: {report.is_dl_app}")
print(f"code features fired for: {sorted(report.code_features.frameworks_fired())}")

for cand in report.candidates:
    status = "EXCLUDED" if cand.excluded else cand.access_type
    kinds = sorted({e.kind for e in cand.matched_frameworks})
    print(f"\n  {cand.entry_path}  [{status}]")
    print(f"    evidence: {kinds} for {cand.frameworks()}")
    print(f"    entropy:  {cand.protection.entropy_bits_per_byte:.2f} bits/byte")
    if cand.excluded:
        print(f"    reason:   {cand.exclusion_reason}")
    if cand.protection.labelmap_artifacts:
        print(f"    labelmap sibling: {cand.protection.labelmap_artifacts}")

# the stub fails the structural parse while TFLite loader code is present, so
# it classifies as type B (protected); the decoy .pb fails the parse with no
# protection signal at all and is gated out entirely
