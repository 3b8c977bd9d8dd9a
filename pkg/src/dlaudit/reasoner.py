"""Model interface reasoning over the IR: locate inference sites, slice
backward to the model file and the input source, slice forward to the output
handler, and assemble a profile (input spec, preprocessing, labels, task).

Slicing semantics: one step follows the frontier variable to its reaching
definitions within the method (flow-insensitive at fixture scale), plus
inter-procedural hops through the call graph: arguments to parameters,
returns to call-site definitions. Object fields are tracked per
(class, field-name) through "field:" pseudo-variables. Every walk keeps a
visited set, so traces terminate in at most |statements| iterations.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .apkscan import ApiSignature, FrameworkRuleset
from .ir import CallGraph, Program, Statement, parse_target, simple_class_name


class ReasoningError(Exception):
    pass


# -- reasoning ruleset -----------------------------------------------------------

@dataclass
class ReasoningRuleset:
    source_apis: list[dict]              # {pattern, modality}
    output_handlers: list[dict]          # {pattern, handler}
    preproc_api_patterns: list[str]
    preproc_param_patterns: dict[str, list[str]]
    task_keywords: dict[str, list[str]]
    input_modality_keywords: dict[str, list[str]]
    public_label_maps: dict[str, dict[str, str]]

    def __post_init__(self):
        if not self.source_apis:
            raise ReasoningError("source API list must not be empty")
        if not self.output_handlers:
            raise ReasoningError("output handler list must not be empty")
        seen: dict[str, str] = {}
        for category, words in self.task_keywords.items():
            for word in words:
                if word in seen:
                    raise ReasoningError(
                        f"keyword {word!r} tagged as both {seen[word]!r} and {category!r}")
                seen[word] = category


def _ruleset_from_doc(doc: dict) -> ReasoningRuleset:
    return ReasoningRuleset(
        source_apis=doc["source_apis"],
        output_handlers=doc["output_handlers"],
        preproc_api_patterns=doc.get("preproc_api_patterns", []),
        preproc_param_patterns=doc.get("preproc_param_patterns", {}),
        task_keywords=doc.get("task_keywords", {}),
        input_modality_keywords=doc.get("input_modality_keywords", {}),
        public_label_maps=doc.get("public_label_maps", {}))


def load_reasoning_ruleset(path) -> ReasoningRuleset:
    return _ruleset_from_doc(json.loads(Path(path).read_text()))


def default_reasoning_ruleset() -> ReasoningRuleset:
    text = resources.files("dlaudit.data").joinpath("default_reasoning_rules.json").read_text()
    return _ruleset_from_doc(json.loads(text))


_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def tokenize(text: str) -> list[str]:
    """Split identifiers on camelCase and non-alphanumerics, lowercase."""
    parts = _CAMEL.sub(" ", text)
    return [t for t in re.split(r"[^A-Za-z0-9]+", parts.lower()) if t]


def keyword_matches(token: str, pattern: str) -> bool:
    """Trailing '*' is a prefix wildcard; otherwise exact token match
    (punctuation in patterns is ignored)."""
    pat = pattern.lower().strip(".")
    if pat.endswith("*"):
        return token.startswith(pat[:-1])
    return token == pat


# -- inference sites ---------------------------------------------------------------

@dataclass
class ModelInferenceSite:
    method_key: str
    stmt_id: int
    framework: str
    signature: ApiSignature
    m: str | None                  # variable bound to the model instance
    i: list[str]                   # variables bound to input arguments
    o: str | None                  # variable bound to the output
    warning: str = ""

    def to_dict(self):
        return {"method": self.method_key, "stmt": self.stmt_id,
                "framework": self.framework, "api": self.signature.receiver_or_name,
                "m": self.m, "i": self.i, "o": self.o, "warning": self.warning}


def _signature_matches(sig: ApiSignature, target: str) -> bool:
    recv, name, _ = parse_target(target)
    want = sig.receiver_or_name
    if "." in want:
        want_recv, want_name = want.rsplit(".", 1)
        return name == want_name and (recv.endswith(want_recv) or recv == "")
    return name == want


def find_mis(program: Program, ruleset: FrameworkRuleset) -> list[ModelInferenceSite]:
    """Every invoke matching an inference API signature becomes one site with
    (m, i, o) bound by the call convention: receiver is the model, arguments
    are inputs, the return value (or trailing output argument) is the output."""
    sites = []
    sigs = ruleset.inference_signatures()
    for method in program.methods:
        for st in method.statements:
            if st.kind != "invoke":
                continue
            for sig in sigs:
                if not _signature_matches(sig, st.target_method):
                    continue
                k = len(sig.param_types)
                uses = st.uses
                warning = ""
                if len(uses) == k + 1:
                    m, args = uses[0], uses[1:]
                elif len(uses) == k and k >= 1:
                    m, args = None, list(uses)
                    warning = "no receiver bound; model variable unknown"
                else:
                    sites.append(ModelInferenceSite(
                        method.key, st.id, sig.framework, sig, None, [], None,
                        warning=f"arity mismatch: call has {len(uses)} uses, "
                                f"signature expects {k} argument(s)"))
                    break
                if st.defs:
                    o, i = st.defs[0], args
                elif len(args) >= 2:
                    o, i = args[-1], args[:-1]
                else:
                    o, i = None, args
                    warning = warning or "no output binding on call"
                sites.append(ModelInferenceSite(method.key, st.id, sig.framework, sig,
                                                m, i, o, warning=warning))
                break
    return sites


# -- slicing machinery ---------------------------------------------------------------

@dataclass
class Slice:
    """Statements touched by a trace plus where the trace stopped."""
    statements: list[tuple[str, int]] = field(default_factory=list)
    hits: list[dict] = field(default_factory=list)
    diagnostic: str = ""

    def add(self, method_key: str, stmt: Statement):
        key = (method_key, stmt.id)
        if key not in self.statements:
            self.statements.append(key)

    def methods(self) -> list[str]:
        seen, out = set(), []
        for mk, _ in self.statements:
            if mk not in seen:
                seen.add(mk)
                out.append(mk)
        return out


def _defining_statements(program: Program, method_key: str, var: str):
    if var.startswith("field:"):
        return program.field_defs(var)
    m = program.method(method_key)
    if m is None:
        return []
    return [(method_key, st) for st in m.statements if var in st.defs]


def _using_statements(program: Program, method_key: str, var: str):
    if var.startswith("field:"):
        out = []
        for m in program.methods:
            out.extend((m.key, st) for st in m.statements if var in st.uses)
        return out
    m = program.method(method_key)
    if m is None:
        return []
    return [(method_key, st) for st in m.statements if var in st.uses]


def _backward_walk(program: Program, iccg: CallGraph, start_method: str, start_vars,
                   on_def) -> Slice:
    """Breadth-first backward data flow. `on_def(depth, method_key, stmt)`
    may return a hit dict; the walk records all hits and always runs to
    frontier exhaustion (visited-set bounded)."""
    sl = Slice()
    frontier = [(start_method, v) for v in start_vars if v]
    visited = set(frontier)
    depth = 0
    while frontier:
        depth += 1
        nxt = []

        def push(mk, var):
            if var and (mk, var) not in visited:
                visited.add((mk, var))
                nxt.append((mk, var))

        for mkey, var in frontier:
            for def_mk, st in _defining_statements(program, mkey, var):
                sl.add(def_mk, st)
                hit = on_def(depth, def_mk, st)
                if hit:
                    sl.hits.append(hit)
                    continue
                if st.kind == "invoke":
                    callees = [c for c in iccg.callees(def_mk, st.id) if not c.startswith("ext:")]
                    if callees:
                        for ck in callees:
                            callee = program.method(ck)
                            if callee is None:
                                continue
                            for ret in callee.statements:
                                if ret.kind == "return":
                                    sl.add(ck, ret)
                                    for rv in ret.uses:
                                        push(ck, rv)
                    else:
                        for u in st.uses:  # external call: conservative pass-through
                            push(def_mk, u)
                else:
                    for u in st.uses:
                        push(def_mk, u)
            # parameter: hop to every call site's matching argument
            method = program.method(mkey)
            if method and var in method.params:
                idx = method.params.index(var)
                for caller_key, stmt_id in iccg.callers(method.key):
                    caller = program.method(caller_key)
                    if caller is None:
                        continue
                    call_st = next((s for s in caller.statements if s.id == stmt_id), None)
                    if call_st is None:
                        continue
                    sl.add(caller_key, call_st)
                    uses = call_st.uses
                    if idx < len(uses):
                        # align right when arity differs (receiver omitted)
                        shift = len(uses) - len(method.params)
                        pos = idx + shift if 0 <= idx + shift < len(uses) else idx
                        push(caller_key, uses[pos])
        frontier = nxt
    return sl


# -- the three traces ------------------------------------------------------------------

@dataclass
class ModelBinding:
    path: str | None
    hits: list[dict]
    slice: Slice
    diagnostic: str = ""


def trace_model_binding(mis: ModelInferenceSite, iccg: CallGraph, program: Program) -> ModelBinding:
    """Backward from the model variable until a string constant or file
    reference is reached; breadth-first order makes the nearest one win."""

    def on_def(depth, mk, st):
        if st.file_refs:
            return {"depth": depth, "method": mk, "stmt": st.id, "path": st.file_refs[0]}
        if st.kind == "const_string" and isinstance(st.literal, str):
            return {"depth": depth, "method": mk, "stmt": st.id, "path": st.literal}
        return None

    sl = _backward_walk(program, iccg, mis.method_key, [mis.m], on_def)
    if not sl.hits:
        return ModelBinding(None, [], sl,
                            diagnostic="no string constant or file reference reachable "
                                       "from the model variable")
    best = min(sl.hits, key=lambda h: (h["depth"], h["method"], h["stmt"]))
    return ModelBinding(best["path"], sl.hits, sl)


@dataclass
class InputSpec:
    modality: str = "unknown"            # image | audio | text | unknown
    shape: tuple[int, ...] | None = None
    source_api: str = ""
    all_sources: list[str] = field(default_factory=list)
    ambiguous_sources: bool = False
    slice: Slice | None = None

    def to_dict(self):
        return {"modality": self.modality,
                "shape": None if self.shape is None else list(self.shape),
                "source_api": self.source_api,
                "all_sources": self.all_sources,
                "ambiguous_sources": self.ambiguous_sources}


def trace_input_source(mis: ModelInferenceSite, iccg: CallGraph, program: Program,
                       rules: ReasoningRuleset) -> InputSpec:
    """Backward from the input argument(s); the first source-API hit fixes the
    modality. All hits are reported; a multi-hit trace is flagged."""

    def on_def(depth, mk, st):
        if st.kind != "invoke":
            return None
        recv, name, _ = parse_target(st.target_method)
        recv_simple = simple_class_name(recv) if recv else ""
        for entry in rules.source_apis:
            pat = entry["pattern"]
            if name == pat or name.startswith(pat) or recv_simple == pat:
                api = name if (name == pat or name.startswith(pat)) else recv_simple
                return {"depth": depth, "method": mk, "stmt": st.id,
                        "api": api, "modality": entry["modality"]}
        return None

    sl = _backward_walk(program, iccg, mis.method_key, mis.i, on_def)
    spec = InputSpec(slice=sl)
    if sl.hits:
        best = min(sl.hits, key=lambda h: (h["depth"], h["method"], h["stmt"]))
        spec.modality = best["modality"]
        spec.source_api = best["api"]
        spec.all_sources = sorted({h["api"] for h in sl.hits})
        spec.ambiguous_sources = len(spec.all_sources) > 1
    else:
        # fall back to vocabulary evidence from the slice
        tokens = slice_tokens(program, sl, extra_methods=[mis.method_key])
        for modality, words in rules.input_modality_keywords.items():
            if any(keyword_matches(t, w) for t in tokens for w in words):
                spec.modality = modality
                break
    return spec


@dataclass
class OutputSpec:
    handler: str = "unknown"             # prob_array | box_tuple | matrix | unknown
    labels: list[str] = field(default_factory=list)
    label_origin: str = "none"           # labelmap_file | switch_case | public_dataset | none
    case_indices: list[int] = field(default_factory=list)
    handler_api: str = ""
    slice: Slice | None = None

    def to_dict(self):
        return {"handler": self.handler, "labels": self.labels,
                "label_origin": self.label_origin, "case_indices": self.case_indices,
                "handler_api": self.handler_api}


def trace_output_handler(mis: ModelInferenceSite, iccg: CallGraph, program: Program,
                         rules: ReasoningRuleset) -> OutputSpec:
    """Forward from the output variable. Branch/switch statements over the
    flow terminate the walk as a probability-array handler and their literals
    become candidate labels; handler APIs classify by their configured kind."""
    spec = OutputSpec()
    sl = Slice()
    if mis.o is None:
        spec.slice = sl
        return spec
    frontier = [(mis.method_key, mis.o)]
    visited = set(frontier)
    while frontier:
        nxt = []

        def push(mk, var):
            if var and (mk, var) not in visited:
                visited.add((mk, var))
                nxt.append((mk, var))

        for mkey, var in frontier:
            for use_mk, st in _using_statements(program, mkey, var):
                sl.add(use_mk, st)
                if st.kind in ("branch", "switch"):
                    if spec.handler == "unknown":
                        spec.handler = "prob_array"
                    if isinstance(st.literal, str) and st.literal not in spec.labels:
                        spec.labels.append(st.literal)
                    elif isinstance(st.literal, (int, float)) and st.literal == int(st.literal):
                        iv = int(st.literal)
                        if iv not in spec.case_indices:
                            spec.case_indices.append(iv)
                    continue
                if st.kind == "invoke":
                    _, name, _ = parse_target(st.target_method)
                    matched = False
                    for entry in rules.output_handlers:
                        if keyword_matches(name.lower(), entry["pattern"].lower()) or \
                                name.lower() == entry["pattern"].lower().rstrip("*"):
                            if spec.handler == "unknown":
                                spec.handler = entry["handler"]
                                spec.handler_api = name
                            matched = True
                            break
                    if matched:
                        continue
                    for ck in iccg.callees(use_mk, st.id):
                        callee = program.method(ck)
                        if callee is None:
                            continue
                        arg_pos = st.uses.index(var)
                        shift = len(st.uses) - len(callee.params)
                        pos = arg_pos - shift
                        if 0 <= pos < len(callee.params):
                            push(ck, callee.params[pos])
                    for d in st.defs:
                        push(use_mk, d)
                elif st.kind == "return":
                    for caller_key, stmt_id in iccg.callers(mkey):
                        caller = program.method(caller_key)
                        if caller is None:
                            continue
                        call_st = next((s for s in caller.statements if s.id == stmt_id), None)
                        if call_st is not None:
                            sl.add(caller_key, call_st)
                            for d in call_st.defs:
                                push(caller_key, d)
                else:
                    for d in st.defs:
                        push(use_mk, d)
        frontier = nxt
    spec.slice = sl
    return spec


# -- preprocessing, labels, task ----------------------------------------------------

@dataclass
class PreprocSpec:
    resize: tuple[int, ...] | None = None
    mean: float | list[float] | None = None
    std: float | list[float] | None = None
    pixel_unpack_shift_mask: bool = False
    ambiguous: bool = False
    matched_apis: list[str] = field(default_factory=list)

    def to_dict(self):
        return {"resize": None if self.resize is None else list(self.resize),
                "mean": self.mean, "std": self.std,
                "pixel_unpack_shift_mask": self.pixel_unpack_shift_mask,
                "ambiguous": self.ambiguous, "matched_apis": self.matched_apis}


def _matches_any(name_tokens, patterns) -> bool:
    return any(keyword_matches(t, p) for t in name_tokens for p in patterns)


def extract_preprocessing(input_slice: Slice | None, program: Program,
                          rules: ReasoningRuleset, model_metadata=None) -> PreprocSpec:
    """Resize from the model's input tensor shape; mean/std from constants
    whose names match the parameter patterns, searched in the slice's
    enclosing classes; shift-and-mask pixel unpacking recognized from
    statement expression text."""
    spec = PreprocSpec()
    if model_metadata is not None and model_metadata.inputs:
        shape = tuple(d for d in model_metadata.inputs[0].shape if d != 1) \
            if len(model_metadata.inputs[0].shape) == 4 else tuple(model_metadata.inputs[0].shape)
        if shape and all(isinstance(d, int) and d > 0 for d in shape):
            spec.resize = shape
    if input_slice is None:
        return spec

    slice_stmts: list[tuple[str, Statement]] = []
    for mk, sid in input_slice.statements:
        m = program.method(mk)
        if m is None:
            continue
        st = next((s for s in m.statements if s.id == sid), None)
        if st is not None:
            slice_stmts.append((mk, st))

    # classes holding preprocessing API calls come first in the search order
    classes, preferred = [], []
    for mk, st in slice_stmts:
        owner = mk.split("->", 1)[0]
        if owner not in classes:
            classes.append(owner)
        if st.kind == "invoke":
            _, name, _ = parse_target(st.target_method)
            if _matches_any(tokenize(name), rules.preproc_api_patterns):
                spec.matched_apis.append(name)
                if owner not in preferred:
                    preferred.append(owner)
    for mk in (input_slice.methods() if input_slice else []):
        owner = mk.split("->", 1)[0]
        if owner not in classes:
            classes.append(owner)
    ordered = preferred + [c for c in classes if c not in preferred]

    means, stds = [], []
    for cls_name in ordered:
        for fname, value in program.class_constants(cls_name).items():
            toks = tokenize(fname)
            if not isinstance(value, (int, float)):
                continue
            if _matches_any(toks, rules.preproc_param_patterns.get("mean", [])):
                means.append(float(value))
            elif _matches_any(toks, rules.preproc_param_patterns.get("std", [])):
                stds.append(float(value))
        if means or stds:
            break  # nearest enclosing class wins

    def settle(vals):
        uniq = sorted(set(vals))
        if not uniq:
            return None
        if len(uniq) == 1:
            return uniq[0]
        spec.ambiguous = True
        return uniq

    spec.mean = settle(means)
    spec.std = settle(stds)

    unpack_pats = [re.compile(p) for p in rules.preproc_param_patterns.get("pixel_unpack", [])]
    for _, st in slice_stmts:
        if isinstance(st.literal, str) and any(p.search(st.literal) for p in unpack_pats):
            spec.pixel_unpack_shift_mask = True
            break
    return spec


def slice_tokens(program: Program, sl: Slice | None, extra_methods=()) -> list[str]:
    """Identifier vocabulary of a slice: class simple names, method names,
    invoke target names, string literals."""
    tokens: list[str] = []
    seen_methods = set()

    def add_method(mk):
        if mk in seen_methods:
            return
        seen_methods.add(mk)
        owner, rest = mk.split("->", 1)
        tokens.extend(tokenize(simple_class_name(owner)))
        tokens.extend(tokenize(rest.split("(", 1)[0]))

    for mk in list(extra_methods) + (sl.methods() if sl else []):
        add_method(mk)
    if sl:
        for mk, sid in sl.statements:
            m = program.method(mk)
            if m is None:
                continue
            st = next((s for s in m.statements if s.id == sid), None)
            if st is None:
                continue
            if st.kind == "invoke":
                _, name, _ = parse_target(st.target_method)
                tokens.extend(tokenize(name))
            if isinstance(st.literal, str):
                tokens.extend(tokenize(st.literal))
    return tokens


def extract_labels(output_spec: OutputSpec, rules: ReasoningRuleset,
                   labelmap_artifacts: list[str] = (), read_entry=None,
                   context_tokens: list[str] = ()) -> tuple[list[str], str, list[str]]:
    """Label source priority: labelmap file beside the model, then switch-case
    string literals, then a public dataset index map named in the context.
    Returns (labels, origin, warnings)."""
    warnings = []
    for art in labelmap_artifacts:
        if read_entry is None:
            break
        try:
            raw = read_entry(art)
            lines = [ln.strip() for ln in raw.decode("utf-8").splitlines() if ln.strip()]
        except Exception as exc:
            warnings.append(f"labelmap artifact {art} unreadable: {exc}")
            continue
        if lines:
            return lines, "labelmap_file", warnings
    if output_spec.labels:
        return list(output_spec.labels), "switch_case", warnings
    for ds_name, mapping in rules.public_label_maps.items():
        if ds_name in context_tokens:
            ordered = [mapping[k] for k in sorted(mapping, key=int)]
            return ordered, "public_dataset", warnings
    return [], "none", warnings


TASKS = ("classification", "object_detection", "pose_detection",
         "segmentation", "stylize", "sequence_predict")


def infer_task(evidence_tokens: list[str], rules: ReasoningRuleset) -> str:
    """Plurality vote of keyword-dictionary matches; ties and no-matches are
    unknown."""
    votes = {t: 0 for t in rules.task_keywords}
    for token in evidence_tokens:
        for task, words in rules.task_keywords.items():
            if any(keyword_matches(token, w) for w in words):
                votes[task] += 1
    best = max(votes.values(), default=0)
    if best == 0:
        return "unknown"
    winners = [t for t, v in votes.items() if v == best]
    return winners[0] if len(winners) == 1 else "unknown"


# -- profile assembly -----------------------------------------------------------------

@dataclass
class ModelProfile:
    mis: ModelInferenceSite
    model_path: str | None
    input: InputSpec
    preproc: PreprocSpec
    output: OutputSpec
    labels: list[str]
    label_origin: str
    task: str
    warnings: list[str] = field(default_factory=list)

    def to_dict(self):
        return {"mis": self.mis.to_dict(), "model_path": self.model_path,
                "input": self.input.to_dict(), "preproc": self.preproc.to_dict(),
                "output": self.output.to_dict(), "labels": self.labels,
                "label_origin": self.label_origin, "task": self.task,
                "warnings": self.warnings}


def profile_program(program: Program, iccg: CallGraph, framework_rules: FrameworkRuleset,
                    rules: ReasoningRuleset, model_metadata=None,
                    labelmap_artifacts=(), read_entry=None,
                    extra_tokens=()) -> list[ModelProfile]:
    """Run the full reasoning pass: one profile per inference site."""
    profiles = []
    for mis in find_mis(program, framework_rules):
        warnings = [mis.warning] if mis.warning else []
        binding = trace_model_binding(mis, iccg, program)
        if binding.diagnostic:
            warnings.append(binding.diagnostic)
        input_spec = trace_input_source(mis, iccg, program, rules)
        output_spec = trace_output_handler(mis, iccg, program, rules)
        preproc = extract_preprocessing(input_spec.slice, program, rules, model_metadata)
        if preproc.resize and input_spec.shape is None:
            input_spec.shape = preproc.resize
        tokens = slice_tokens(program, input_spec.slice, extra_methods=[mis.method_key])
        tokens += slice_tokens(program, output_spec.slice)
        tokens += list(extra_tokens)
        labels, origin, label_warnings = extract_labels(
            output_spec, rules, list(labelmap_artifacts), read_entry, tokens)
        warnings.extend(label_warnings)
        task = infer_task(tokens + [t for lab in labels for t in tokenize(lab)], rules)
        if task == "classification" and output_spec.handler == "unknown" and labels:
            output_spec.handler = "prob_array"
        profiles.append(ModelProfile(
            mis=mis, model_path=binding.path, input=input_spec, preproc=preproc,
            output=output_spec, labels=labels, label_origin=origin, task=task,
            warnings=warnings))
    return profiles
