"""End-to-end audit pipeline: scan APKs, extract and parse models, profile
interfaces from IR, build validated attack datasets, run the campaign, and
assemble one deterministic report.

A failure while processing one APK or model is recorded in the report's
errors section and never aborts the rest. Reports are location-independent:
model references are content hashes plus paths relative to the output
directory, so identical inputs, config, and seeds serialize to identical
bytes regardless of where the output lives.
"""
from __future__ import annotations

import json
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import apkscan as sc
from . import dataset as ds
from . import ir as irmod
from . import minigraph as mg
from . import reasoner as rz
from .attacks import (ALL_METHODS, AttackConfig, budget_sweep, evaluate_campaign)

STAGES = ("scan", "profile", "metadata", "dataset", "attack")

DIFFICULTY_DIRECT = "direct test"
DIFFICULTY_ADAPTION = "interface adaption"
DIFFICULTY_DYNAMIC = "dynamic extraction"
DIFFICULTY_QUERY = "black-box query"


class PipelineError(Exception):
    pass


@dataclass
class PipelineConfig:
    apks: list[str]
    ir_files: dict[str, str] = field(default_factory=dict)   # apk path -> IR path
    rules: str | None = None
    reasoning_rules: str | None = None
    corpus: str | None = None
    out_dir: str = "audit-out"
    stages: list[str] = field(default_factory=lambda: list(STAGES))
    methods: list[str] = field(default_factory=lambda: ["fgsm", "pgd", "cw", "nes"])
    attack: dict = field(default_factory=dict)     # AttackConfig field overrides
    eps_sweep: str | None = None                   # "start:stop:stride"
    workers: int = 1
    metadata_gate: bool = True
    alpha1: float = 0.7
    alpha2: float = 0.8
    samples_per_class: int = 50
    top_n: int = 5
    seed: int = 0
    include_timings: bool = False

    def validate(self):
        if not self.apks:
            raise PipelineError("no input APKs")
        if self.workers < 1:
            raise PipelineError("worker count must be >= 1")
        for p in self.apks:
            if not Path(p).exists():
                raise PipelineError(f"input APK {p} does not exist")
        for label, p in (("rules", self.rules), ("reasoning_rules", self.reasoning_rules),
                         ("corpus", self.corpus)):
            if p is not None and not Path(p).exists():
                raise PipelineError(f"{label} path {p} does not exist")
        for apk, irp in self.ir_files.items():
            if not Path(irp).exists():
                raise PipelineError(f"IR file {irp} (for {apk}) does not exist")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise PipelineError(f"unknown stages {bad}; valid: {STAGES}")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad:
            raise PipelineError(f"unknown methods {bad}; valid: {ALL_METHODS}")
        if not 0 < self.alpha1 < 1 or not 0 < self.alpha2 < 1:
            raise PipelineError("alpha thresholds must lie in (0, 1)")

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        doc = json.loads(Path(path).read_text())
        return cls(**doc)

    def attack_config(self, **extra) -> AttackConfig:
        kw = dict(self.attack)
        kw.setdefault("seed", self.seed)
        kw.setdefault("samples_per_class", self.samples_per_class)
        kw.update(extra)
        return AttackConfig(**kw)


def parse_eps_sweep(text: str) -> list[float]:
    try:
        start, stop, stride = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise PipelineError(f"bad sweep spec {text!r}; want start:stop:stride") from exc
    if stride <= 0 or stop < start:
        raise PipelineError(f"bad sweep spec {text!r}")
    n = int(round((stop - start) / stride))
    return [round(start + i * stride, 10) for i in range(n + 1)]


@dataclass
class AuditReport:
    tool_version: str
    ruleset_version: int
    config: dict
    scans: list[dict]
    models: list[dict]
    labelmaps: dict
    campaign: dict | None
    sweep: dict | None
    errors: list[dict]
    timings: dict | None = None

    def to_dict(self):
        out = {"tool_version": self.tool_version, "ruleset_version": self.ruleset_version,
               "config": self.config, "scans": self.scans, "models": self.models,
               "labelmaps": self.labelmaps, "campaign": self.campaign,
               "sweep": self.sweep, "errors": self.errors}
        if self.timings is not None:
            out["timings"] = self.timings
        return out


def _difficulty(access_type: str, profile: dict | None) -> str:
    if access_type == "A":
        pre = (profile or {}).get("preproc") or {}
        needs = pre.get("mean") is not None or pre.get("std") is not None \
            or pre.get("pixel_unpack_shift_mask")
        return DIFFICULTY_ADAPTION if needs else DIFFICULTY_DIRECT
    if access_type == "B":
        return DIFFICULTY_DYNAMIC
    return DIFFICULTY_QUERY


def _config_echo(cfg: PipelineConfig) -> dict:
    # out_dir excluded on purpose: reports must not depend on output location
    return {
        "apks": [str(p) for p in cfg.apks],
        "ir_files": {k: str(v) for k, v in sorted(cfg.ir_files.items())},
        "rules": cfg.rules, "reasoning_rules": cfg.reasoning_rules,
        "corpus": cfg.corpus, "stages": list(cfg.stages), "methods": list(cfg.methods),
        "attack": dict(sorted(cfg.attack.items())), "eps_sweep": cfg.eps_sweep,
        "metadata_gate": cfg.metadata_gate, "alpha1": cfg.alpha1, "alpha2": cfg.alpha2,
        "samples_per_class": cfg.samples_per_class, "top_n": cfg.top_n, "seed": cfg.seed,
    }


def run_pipeline(config: PipelineConfig) -> AuditReport:
    config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    models_dir = out_dir / "models"
    ruleset = sc.load_ruleset(config.rules) if config.rules else sc.default_ruleset()
    reasoning = rz.load_reasoning_ruleset(config.reasoning_rules) \
        if config.reasoning_rules else rz.default_reasoning_ruleset()
    scan_cfg = sc.ScanConfig(metadata_gate=config.metadata_gate)
    stages = set(config.stages)
    errors: list[dict] = []
    timings: dict[str, float] = {}

    def timed(stage, fn, *a, **kw):
        t0 = time.monotonic()
        try:
            return fn(*a, **kw)
        finally:
            timings[stage] = timings.get(stage, 0.0) + (time.monotonic() - t0)

    # -- scan ---------------------------------------------------------------
    scans: list[dict] = []
    scan_reports: dict[str, sc.ApkScanReport] = {}

    def scan_one(apk):
        return apk, sc.scan_apk(apk, ruleset, scan_cfg)

    if "scan" in stages:
        t0 = time.monotonic()
        if config.workers > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(lambda a: _safe(scan_one, a), config.apks))
        else:
            results = [_safe(scan_one, a) for a in config.apks]
        timings["scan"] = time.monotonic() - t0
        for apk, outcome in zip(config.apks, results):
            if isinstance(outcome, Exception):
                errors.append({"stage": "scan", "apk": str(apk), "error": str(outcome)})
                continue
            _, rep = outcome
            scan_reports[str(apk)] = rep
            scans.append(rep.to_dict())
        scans.sort(key=lambda d: d["apk_path"])

    # -- extraction + metadata + profile + execution handles ------------------
    models: list[dict] = []
    executable: dict[str, object] = {}      # content hash -> loaded graph
    profiles_by_hash: dict[str, dict] = {}
    index = sc.ExtractionIndex(models_dir) if scan_reports else None

    for apk, rep in sorted(scan_reports.items()):
        program = iccg = None
        ir_path = config.ir_files.get(apk) or config.ir_files.get(Path(apk).name)
        if "profile" in stages and ir_path:
            try:
                program = timed("profile", irmod.parse_program, ir_path)
                iccg = irmod.build_iccg(program)
            except irmod.IrError as exc:
                errors.append({"stage": "profile", "apk": apk, "error": str(exc)})
        for cand in rep.active_candidates():
            record = {
                "content_hash": cand.content_hash,
                "apk_id": cand.apk_id, "apk_path": apk,
                "entry_path": cand.entry_path, "byte_size": cand.byte_size,
                "access_type": cand.access_type,
                "frameworks": cand.frameworks(),
                "protection": cand.protection.to_dict(),
                "metadata": cand.metadata.to_dict() if cand.metadata else None,
                "stored_as": None, "profile": None,
                "difficulty": None, "executable": False,
                "status": "discovered",
            }
            try:
                if cand.byte_size >= sc.ScanConfig().min_extract_size or cand.metadata:
                    ext = timed("scan", sc.extract_model, apk, cand, models_dir, index)
                    record["stored_as"] = f"models/{cand.content_hash}.bin"
                    record["deduplicated"] = ext["deduplicated"]
            except sc.ExtractionError as exc:
                errors.append({"stage": "scan", "apk": apk,
                               "entry": cand.entry_path, "error": str(exc)})
            if program is not None and iccg is not None:
                with zipfile.ZipFile(apk) as zf:
                    lib_tokens = [t for n in zf.namelist() if n.endswith(".so")
                                  for t in rz.tokenize(Path(n).name)]

                    def read_entry(name, _zf=zf):
                        return _zf.read(name)

                    profs = timed("profile", rz.profile_program,
                                  program, iccg, ruleset, reasoning,
                                  model_metadata=cand.metadata,
                                  labelmap_artifacts=cand.protection.labelmap_artifacts,
                                  read_entry=read_entry, extra_tokens=lib_tokens)
                matched = [p for p in profs
                           if p.model_path and p.model_path in cand.entry_path] or profs
                if matched:
                    record["profile"] = matched[0].to_dict()
                    profiles_by_hash[cand.content_hash] = record["profile"]
            record["difficulty"] = _difficulty(cand.access_type, record["profile"])
            if "metadata" in stages and cand.metadata \
                    and cand.metadata.format == "minigraph" and record["stored_as"]:
                try:
                    graph = timed("metadata", mg.load_graph,
                                  models_dir / f"{cand.content_hash}.bin")
                    executable[cand.content_hash] = graph
                    record["executable"] = True
                    record["status"] = "loaded"
                except mg.GraphError as exc:
                    errors.append({"stage": "metadata", "apk": apk,
                                   "entry": cand.entry_path, "error": str(exc)})
            elif cand.access_type in ("B", "C"):
                record["status"] = "requires-dynamic"
            elif cand.metadata and cand.metadata.format != "minigraph":
                record["status"] = "parsed-not-executable"
            models.append(record)
    models.sort(key=lambda r: (r["content_hash"], r["apk_path"], r["entry_path"]))

    # -- dataset ------------------------------------------------------------
    labelmaps: dict[str, dict] = {}
    attack_sets: dict[str, ds.AttackDataset] = {}
    if "dataset" in stages and config.corpus and executable:
        corpus = ds.LabeledCorpus.build(config.corpus)
        for chash in sorted(executable):
            graph = executable[chash]
            profile = profiles_by_hash.get(chash) or {}
            labels = profile.get("labels") or []
            try:
                cands = []
                if labels:
                    ranked = ds.match_semantic_labels(labels, corpus, config.top_n)
                    wanted = sorted({cls for lst in ranked.values() for cls, _ in lst})
                else:
                    wanted = sorted(corpus.classes)
                shape = graph.input_spec.shape
                for cls_label in wanted:
                    for p in corpus.classes[cls_label]:
                        cands.append((ds.decode_image(p, shape), cls_label))
                lm = timed("dataset", ds.validate_labelmap,
                           lambda v: mg.forward(graph, v).probs, cands,
                           graph.num_classes, config.alpha1, config.alpha2)
                labelmaps[chash] = lm.to_dict()
                attack_sets[chash] = timed(
                    "dataset", ds.sample_attack_set, lm, corpus,
                    config.samples_per_class, config.seed, shape)
            except ds.DatasetError as exc:
                errors.append({"stage": "dataset", "model": chash, "error": str(exc)})

    # -- attack ---------------------------------------------------------------
    campaign = sweep = None
    if "attack" in stages and attack_sets:
        cfg = config.attack_config()
        campaign = timed("attack", evaluate_campaign,
                         {h: executable[h] for h in attack_sets}, attack_sets,
                         config.methods, cfg).to_dict()
        if config.eps_sweep:
            eps_values = parse_eps_sweep(config.eps_sweep)
            wb = [m for m in config.methods if m in ("fgsm", "bim", "mim", "pgd")] or ["fgsm"]
            pairs = {}
            for h in sorted(attack_sets):
                g = executable[h]
                if isinstance(g, mg.Graph):
                    x, _ = _calibration_batch(attack_sets[h])
                    pairs[h] = (g, mg.quantize(g, x) if len(x) else None)
            if pairs:
                sweep = timed("attack", budget_sweep, pairs,
                              _merge_datasets(attack_sets), eps_values, wb, cfg).to_dict()

    report = AuditReport(
        tool_version=__version__, ruleset_version=ruleset.version,
        config=_config_echo(config), scans=scans, models=models,
        labelmaps={k: labelmaps[k] for k in sorted(labelmaps)},
        campaign=campaign, sweep=sweep, errors=errors,
        timings={k: round(v, 3) for k, v in sorted(timings.items())}
        if config.include_timings else None)
    out_path = out_dir / "report.json"
    payload = emit_report(report, "json")
    tmp = out_path.with_suffix(".json.tmp")
    tmp.write_bytes(payload)
    tmp.replace(out_path)
    return report


def _safe(fn, *a):
    try:
        return fn(*a)
    except Exception as exc:   # isolation boundary: one APK never kills the run
        return exc


def _calibration_batch(attack_set: ds.AttackDataset, limit: int = 64) -> tuple:
    xs = [s.tensor for s in attack_set.samples[:limit]]
    return (np.stack(xs) if xs else np.zeros((0,))), len(xs)


def _merge_datasets(attack_sets: dict) -> ds.AttackDataset:
    all_samples = [s for h in sorted(attack_sets) for s in attack_sets[h].samples]
    per_class: dict[str, int] = {}
    for s in all_samples:
        per_class[s.label] = per_class.get(s.label, 0) + 1
    return ds.AttackDataset(samples=all_samples, per_class=per_class)


# -- report serialization ---------------------------------------------------------

def emit_report(audit: AuditReport, fmt: str = "json") -> bytes:
    """Deterministic serialization; the text table mirrors the campaign layout
    grouped by access type and test difficulty."""
    if fmt == "json":
        return (json.dumps(audit.to_dict(), sort_keys=True, indent=2,
                           ensure_ascii=False) + "\n").encode("utf-8")
    if fmt != "text-table":
        raise PipelineError(f"unknown report format {fmt!r} (json or text-table)")

    lines = [f"audit report (tool {audit.tool_version})", ""]
    groups: dict[tuple[str, str], list[dict]] = {}
    for rec in audit.models:
        key = (rec["access_type"], rec["difficulty"] or "unknown")
        groups.setdefault(key, []).append(rec)
    per_model = (audit.campaign or {}).get("per_model", {})
    methods = (audit.campaign or {}).get("methods", [])
    header = ["Type", "Test Difficulty", "Num"] + list(methods) + ["Succ Num"]
    rows = []
    for (typ, diff) in sorted(groups):
        recs = groups[(typ, diff)]
        n = len(recs)
        hits = {m: 0 for m in methods}
        defeated = 0
        for rec in recs:
            camp = per_model.get(rec["content_hash"])
            if not camp:
                continue
            defeated += int(camp["defeated"])
            for m in methods:
                out = camp["per_method"].get(m)
                if out and out["status"] == "ok" and \
                        out["evaluated"] > 0 and \
                        out["successes"] / out["evaluated"] >= 0.8:
                    hits[m] += 1
        rows.append([typ, diff, str(n)] +
                    [str(hits[m]) if any(per_model) else "/" for m in methods] +
                    [str(defeated)])
    widths = [max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
              for i in range(len(header))]
    fmt_row = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))
    lines.append(fmt_row(header))
    lines.append("-+-".join("-" * w for w in widths))
    lines.extend(fmt_row(r) for r in rows)
    if audit.campaign:
        lines += ["", f"models defeated: "
                      f"{sum(1 for c in per_model.values() if c['defeated'])}"
                      f"/{len(per_model)} (asr_m {audit.campaign['asr_m']})"]
    if audit.errors:
        lines += ["", f"errors: {len(audit.errors)} (see JSON report)"]
    return ("\n".join(lines) + "\n").encode("utf-8")
