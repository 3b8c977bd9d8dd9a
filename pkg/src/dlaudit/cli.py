"""Command-line front end.

Verbs: scan, profile, dataset (build|validate), attack, audit, report, and
the engine tools under `mg` (train|eval|quantize|inspect). Exit codes:
0 clean, 1 partial failures, 2 usage or configuration error.
The DLAUDIT_OUT_DIR environment variable overrides any output directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import apkscan as sc
from . import dataset as ds
from . import ir as irmod
from . import metadata as md
from . import minigraph as mg
from . import reasoner as rz
from .attacks import AttackConfig, budget_sweep, evaluate_campaign
from .pipeline import (AuditReport, PipelineConfig, PipelineError, emit_report,
                       parse_eps_sweep, run_pipeline)

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE = 0, 1, 2


def _out_dir(value: str) -> Path:
    return Path(os.environ.get("DLAUDIT_OUT_DIR", value))


def _write(path, payload: bytes | str):
    data = payload if isinstance(payload, bytes) else payload.encode()
    if str(path) == "-":
        sys.stdout.buffer.write(data)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(data)


def cmd_scan(args) -> int:
    ruleset = sc.load_ruleset(args.rules) if args.rules else sc.default_ruleset()
    cfg = sc.ScanConfig(metadata_gate=not args.no_metadata_gate)
    out = _out_dir(args.out) if args.out else None
    failures = 0
    index = sc.ExtractionIndex(out / "models") if out else None
    for apk in args.apk:
        try:
            rep = sc.scan_apk(apk, ruleset, cfg)
        except (sc.ApkFormatError, OSError) as exc:
            print(f"error: {apk}: {exc}", file=sys.stderr)
            failures += 1
            continue
        if out:
            _write(out / f"{rep.apk_id}.scan.json", rep.to_json())
            for cand in rep.active_candidates():
                if cand.byte_size >= cfg.min_extract_size or cand.metadata:
                    sc.extract_model(apk, cand, out / "models", index)
        else:
            sys.stdout.write(rep.to_json())
        verdict = "DL app" if rep.is_dl_app else "no DL evidence"
        print(f"{apk}: {verdict}, {len(rep.active_candidates())} candidate(s)",
              file=sys.stderr)
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_profile(args) -> int:
    ruleset = sc.load_ruleset(args.rules) if args.rules else sc.default_ruleset()
    reasoning = rz.load_reasoning_ruleset(args.reasoning_rules) \
        if args.reasoning_rules else rz.default_reasoning_ruleset()
    program = irmod.parse_program(args.ir)
    iccg = irmod.build_iccg(program)
    read_entry = None
    labelmap_artifacts: list[str] = []
    extra_tokens: list[str] = []
    if args.apk:
        import zipfile
        zf = zipfile.ZipFile(args.apk)
        read_entry = zf.read
        names = zf.namelist()
        labelmap_artifacts = [n for n in names if sc.LABELMAP_SIBLING.search(n.rsplit("/", 1)[-1])]
        extra_tokens = [t for n in names if n.endswith(".so")
                        for t in rz.tokenize(Path(n).name)]
    profiles = rz.profile_program(program, iccg, ruleset, reasoning,
                                  labelmap_artifacts=labelmap_artifacts,
                                  read_entry=read_entry, extra_tokens=extra_tokens)
    doc = {"apk": args.apk, "ir": args.ir, "profiles": [p.to_dict() for p in profiles]}
    _write(args.out, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _load_labelmap_file(path) -> ds.LabelMap:
    doc = json.loads(Path(path).read_text())
    entries = {int(k): v for k, v in doc.get("entries", doc).items()}
    return ds.LabelMap(entries=entries, coverage=doc.get("coverage", 1.0),
                       alpha1=doc.get("alpha1", 0.7), alpha2=doc.get("alpha2", 0.8))


def cmd_dataset(args) -> int:
    corpus = ds.LabeledCorpus.build(args.corpus)
    if args.action == "validate":
        graph = mg.load_graph(args.model)
        labels = args.labels.split(",") if args.labels else sorted(corpus.classes)
        ranked = ds.match_semantic_labels(labels, corpus, args.top_n)
        wanted = sorted({cls for lst in ranked.values() for cls, _ in lst})
        if not wanted:
            print("error: no corpus classes match the model labels", file=sys.stderr)
            return EXIT_USAGE
        cands = [(ds.decode_image(p, graph.input_spec.shape), cls)
                 for cls in wanted for p in corpus.classes[cls]]
        lm = ds.validate_labelmap(lambda v: mg.forward(graph, v).probs, cands,
                                  graph.num_classes, args.alpha1, args.alpha2)
        _write(args.out, json.dumps(lm.to_dict(), sort_keys=True, indent=2) + "\n")
        print(f"mapped {len(lm.entries)} of {graph.num_classes} indices "
              f"(coverage {lm.coverage:.2f})", file=sys.stderr)
        return EXIT_OK
    # build
    lm = _load_labelmap_file(args.labelmap)
    resize = tuple(int(v) for v in args.resize.split(",")) if args.resize else None
    out = ds.sample_attack_set(lm, corpus, k=args.k, seed=args.seed, resize=resize)
    doc = {"k": args.k, "seed": args.seed, "per_class": out.per_class,
           "warnings": out.warnings,
           "samples": [{"path": s.path, "label": s.label, "label_index": s.label_index}
                       for s in out.samples]}
    _write(args.out, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_attack(args) -> int:
    graph = mg.load_graph(args.model)
    corpus = ds.LabeledCorpus.build(args.dataset)
    if args.labelmap:
        lm = _load_labelmap_file(args.labelmap)
    else:
        lm = ds.LabelMap(entries={i: name for i, name in enumerate(sorted(corpus.classes))},
                         coverage=1.0, alpha1=0.7, alpha2=0.8)
    attack_set = ds.sample_attack_set(lm, corpus, k=args.k, seed=args.seed,
                                      resize=graph.input_spec.shape)
    methods = args.methods.split(",")
    cfg = AttackConfig(epsilon=args.eps, seed=args.seed)
    campaign = evaluate_campaign({"model": graph}, {"model": attack_set}, methods, cfg)
    doc = {"config": {"model": str(args.model), "dataset": str(args.dataset),
                      "methods": methods, "epsilon": args.eps, "seed": args.seed},
           "campaign": campaign.to_dict()}
    if args.sweep:
        eps_values = parse_eps_sweep(args.sweep)
        wb = [m for m in methods if m in ("fgsm", "bim", "mim", "pgd")] or ["fgsm"]
        if isinstance(graph, mg.Graph):
            calib = np.stack([s.tensor for s in attack_set.samples[:64]])
            qtwin = mg.quantize(graph, calib)
            doc["sweep"] = budget_sweep({"model": (graph, qtwin)}, attack_set,
                                        eps_values, wb, cfg).to_dict()
    _write(args.out, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    defeated = campaign.per_model["model"].defeated
    print(f"defeated: {defeated}", file=sys.stderr)
    return EXIT_OK


def cmd_audit(args) -> int:
    if args.config:
        cfg = PipelineConfig.from_file(args.config)
        if args.out:
            cfg.out_dir = str(_out_dir(args.out))
    else:
        if not args.apk:
            print("error: audit needs --config or at least one --apk", file=sys.stderr)
            return EXIT_USAGE
        ir_files = {}
        for pair in args.ir or []:
            apk, _, irp = pair.partition("=")
            if not irp:
                print(f"error: --ir wants APK=IRFILE, got {pair!r}", file=sys.stderr)
                return EXIT_USAGE
            ir_files[apk] = irp
        cfg = PipelineConfig(
            apks=list(args.apk), ir_files=ir_files, corpus=args.corpus,
            out_dir=str(_out_dir(args.out)), seed=args.seed,
            methods=args.methods.split(",") if args.methods else ["fgsm", "pgd", "cw", "nes"],
            stages=args.stages.split(",") if args.stages
            else ["scan", "profile", "metadata", "dataset", "attack"],
            eps_sweep=args.sweep, metadata_gate=not args.no_metadata_gate,
            include_timings=args.timings, workers=args.workers)
    try:
        report = run_pipeline(cfg)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"report written to {Path(cfg.out_dir) / 'report.json'}", file=sys.stderr)
    return EXIT_PARTIAL if report.errors else EXIT_OK


def cmd_report(args) -> int:
    doc = json.loads(Path(args.report).read_text())
    audit = AuditReport(
        tool_version=doc.get("tool_version", "?"),
        ruleset_version=doc.get("ruleset_version", 0), config=doc.get("config", {}),
        scans=doc.get("scans", []), models=doc.get("models", []),
        labelmaps=doc.get("labelmaps", {}), campaign=doc.get("campaign"),
        sweep=doc.get("sweep"), errors=doc.get("errors", []),
        timings=doc.get("timings"))
    sys.stdout.buffer.write(emit_report(audit, args.format))
    return EXIT_OK


# -- mg: engine tools ---------------------------------------------------------------

def _corpus_tensors(corpus_dir, shape):
    corpus = ds.LabeledCorpus.build(corpus_dir)
    names = sorted(corpus.classes)
    xs, ys = [], []
    for idx, name in enumerate(names):
        for p in corpus.classes[name]:
            xs.append(ds.decode_image(p, shape))
            ys.append(idx)
    return np.stack(xs), np.asarray(ys), names


def cmd_mg(args) -> int:
    if args.mg_action == "train":
        shape = tuple(int(v) for v in args.input_shape.split(","))
        x, y, names = _corpus_tensors(args.corpus, shape)
        rng = np.random.default_rng(args.seed)
        k = len(names)
        hidden = args.hidden
        n_in = int(np.prod(shape))
        graph = mg.Graph(mg.TensorSpec(shape), [
            mg.OpNode("f", "flatten", ["input"]),
            mg.OpNode("d1", "dense", ["f"], {}, {"weight": "w1", "bias": "b1"}),
            mg.OpNode("r", "relu", ["d1"]),
            mg.OpNode("d2", "dense", ["r"], {}, {"weight": "w2", "bias": "b2"}),
        ], {"w1": (rng.standard_normal((n_in, hidden)) * 0.2).astype(np.float32),
            "b1": np.zeros(hidden, dtype=np.float32),
            "w2": (rng.standard_normal((hidden, k)) * 0.2).astype(np.float32),
            "b2": np.zeros(k, dtype=np.float32)})
        res = mg.train(graph, x, y, mg.TrainConfig(lr=args.lr, epochs=args.epochs,
                                                   batch=args.batch, seed=args.seed))
        mg.save_graph(res.graph, args.out)
        print(f"train accuracy {res.train_accuracy:.3f}; classes: {','.join(names)}; "
              f"saved {args.out}", file=sys.stderr)
        return EXIT_OK
    if args.mg_action == "eval":
        graph = mg.load_graph(args.model)
        x, y, names = _corpus_tensors(args.corpus, graph.input_spec.shape)
        pred = [mg.forward(graph, xi).top_index for xi in x]
        acc = float(np.mean(np.asarray(pred) == y))
        print(json.dumps({"accuracy": acc, "n": len(y), "classes": names}))
        return EXIT_OK
    if args.mg_action == "quantize":
        graph = mg.load_graph(args.model)
        if not isinstance(graph, mg.Graph):
            print("error: input is already quantized", file=sys.stderr)
            return EXIT_USAGE
        x, _, _ = _corpus_tensors(args.corpus, graph.input_spec.shape)
        qg = mg.quantize(graph, x[:args.calib])
        mg.save_graph(qg, args.out)
        print(f"quantized with {min(args.calib, len(x))} calibration inputs; "
              f"saved {args.out}", file=sys.stderr)
        return EXIT_OK
    if args.mg_action == "inspect":
        data = Path(args.model).read_bytes()
        meta = md.parse_model(data, str(args.model))
        print(json.dumps(meta.to_dict(), sort_keys=True, indent=2))
        return EXIT_OK
    return EXIT_USAGE


def _add_mg_parser(sub):
    p_mg = sub.add_parser("mg", help="engine tools: train, eval, quantize, inspect")
    mg_sub = p_mg.add_subparsers(dest="mg_action", required=True)
    t = mg_sub.add_parser("train")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--input-shape", default="8,8,3")
    t.add_argument("--hidden", type=int, default=32)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--seed", type=int, default=0)
    e = mg_sub.add_parser("eval")
    e.add_argument("--model", required=True)
    e.add_argument("--corpus", required=True)
    q = mg_sub.add_parser("quantize")
    q.add_argument("--model", required=True)
    q.add_argument("--corpus", required=True)
    q.add_argument("--out", required=True)
    q.add_argument("--calib", type=int, default=64)
    i = mg_sub.add_parser("inspect")
    i.add_argument("--model", required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dlaudit",
                                 description="Audit on-device DL models in Android apps.")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("scan", help="discover model candidates in APKs")
    p.add_argument("apk", nargs="+")
    p.add_argument("--rules")
    p.add_argument("--out")
    p.add_argument("--no-metadata-gate", action="store_true")

    p = sub.add_parser("profile", help="reason about model interfaces from an IR file")
    p.add_argument("apk", nargs="?")
    p.add_argument("--ir", required=True)
    p.add_argument("--rules")
    p.add_argument("--reasoning-rules")
    p.add_argument("--out", default="-")

    p = sub.add_parser("dataset", help="build or validate attack datasets")
    p.add_argument("action", choices=["build", "validate"])
    p.add_argument("--corpus", required=True)
    p.add_argument("--model")
    p.add_argument("--labels")
    p.add_argument("--labelmap")
    p.add_argument("--alpha1", type=float, default=0.7)
    p.add_argument("--alpha2", type=float, default=0.8)
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resize")
    p.add_argument("--out", default="-")

    p = sub.add_parser("attack", help="run adversarial attacks on a model")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--labelmap")
    p.add_argument("--methods", default="fgsm,pgd,cw,nes")
    p.add_argument("--eps", type=float, default=0.06)
    p.add_argument("--sweep")
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")

    p = sub.add_parser("audit", help="run the full pipeline")
    p.add_argument("--config")
    p.add_argument("--apk", action="append")
    p.add_argument("--ir", action="append", metavar="APK=IRFILE")
    p.add_argument("--corpus")
    p.add_argument("--out", default="audit-out")
    p.add_argument("--methods")
    p.add_argument("--stages")
    p.add_argument("--sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-metadata-gate", action="store_true")
    p.add_argument("--timings", action="store_true")

    p = sub.add_parser("report", help="re-emit a report in another format")
    p.add_argument("report")
    p.add_argument("--format", choices=["json", "text-table"], default="text-table")

    _add_mg_parser(sub)
    return ap


_HANDLERS = {"scan": cmd_scan, "profile": cmd_profile, "dataset": cmd_dataset,
             "attack": cmd_attack, "audit": cmd_audit, "report": cmd_report,
             "mg": cmd_mg}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return _HANDLERS[args.verb](args)
    except (sc.RulesetError, sc.ApkFormatError, irmod.IrError, ds.DatasetError,
            md.ModelParseError, mg.GraphError, PipelineError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def mg_main(argv=None) -> int:
    """Console entry point for the engine tools: `mg train|eval|quantize|inspect`."""
    argv = list(sys.argv[1:] if argv is None else argv)
    return main(["mg"] + argv)


if __name__ == "__main__":
    sys.exit(main())
