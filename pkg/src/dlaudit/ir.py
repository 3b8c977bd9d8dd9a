"""App-code intermediate representation and its call graph.

Programs arrive as JSON: classes (with constant fields), methods, and per
method an ordered list of statements carrying def/use variable ids. Variables
are method-local except ids beginning with "field:", which name a
(class, field) pair and are shared program-wide. For invoke statements the
convention is uses[0] = receiver, remaining uses = arguments; a method's
`params` list mirrors the same order.

Virtual calls are resolved by class hierarchy analysis: an invoke on class C
reaches the named method on C and on every subtype that overrides it.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

IR_VERSION = 1

STATEMENT_KINDS = {"invoke", "assign", "const_string", "const_num",
                   "new_instance", "return", "branch", "switch"}


class IrError(Exception):
    """IR document violates the schema."""


@dataclass
class Statement:
    id: int
    kind: str
    defs: list[str] = field(default_factory=list)
    uses: list[str] = field(default_factory=list)
    target_method: str | None = None
    literal: str | float | int | None = None
    file_refs: list[str] = field(default_factory=list)


@dataclass
class MethodDef:
    owner: str
    name: str
    signature: str
    params: list[str]
    statements: list[Statement]

    @property
    def key(self) -> str:
        return f"{self.owner}->{self.name}{self.signature}"


@dataclass
class ClassDef:
    name: str
    super_name: str = ""
    interfaces: list[str] = field(default_factory=list)
    fields: list[dict] = field(default_factory=list)   # {"name", "const_value"?}

    @property
    def simple_name(self) -> str:
        return simple_class_name(self.name)


def simple_class_name(name: str) -> str:
    """'Lcom/app/LightClassifier;' -> 'LightClassifier'; plain names pass through."""
    n = name
    if n.startswith("L") and n.endswith(";"):
        n = n[1:-1]
    return n.rsplit("/", 1)[-1]


@dataclass
class Program:
    classes: list[ClassDef]
    methods: list[MethodDef]

    def __post_init__(self):
        self._methods_by_key = {}
        for m in self.methods:
            if m.key in self._methods_by_key:
                raise IrError(f"duplicate method signature {m.key}")
            self._methods_by_key[m.key] = m
        self._classes_by_name = {c.name: c for c in self.classes}
        # class -> direct subtypes (super and interface edges both count)
        self._children: dict[str, list[str]] = {}
        for c in self.classes:
            for parent in [c.super_name] + c.interfaces:
                if parent:
                    self._children.setdefault(parent, []).append(c.name)

    def method(self, key: str) -> MethodDef | None:
        return self._methods_by_key.get(key)

    def cls(self, name: str) -> ClassDef | None:
        return self._classes_by_name.get(name)

    def subtypes(self, name: str) -> list[str]:
        """Transitive subtypes, the class itself first."""
        out, todo = [name], [name]
        while todo:
            cur = todo.pop()
            for child in self._children.get(cur, []):
                if child not in out:
                    out.append(child)
                    todo.append(child)
        return out

    def methods_of_class(self, cls_name: str) -> list[MethodDef]:
        return [m for m in self.methods if m.owner == cls_name]

    def class_constants(self, cls_name: str) -> dict[str, object]:
        c = self.cls(cls_name)
        if c is None:
            return {}
        return {f["name"]: f["const_value"] for f in c.fields if "const_value" in f}

    def field_defs(self, field_var: str) -> list[tuple[str, Statement]]:
        out = []
        for m in self.methods:
            for st in m.statements:
                if field_var in st.defs:
                    out.append((m.key, st))
        return out


def _statement_from_dict(d: dict, where: str) -> Statement:
    kind = d.get("kind")
    if kind not in STATEMENT_KINDS:
        raise IrError(f"{where}: unknown statement kind {kind!r}")
    if "id" not in d:
        raise IrError(f"{where}: statement missing id")
    return Statement(
        id=int(d["id"]), kind=kind,
        defs=list(d.get("defs", [])), uses=list(d.get("uses", [])),
        target_method=d.get("target_method"),
        literal=d.get("literal"),
        file_refs=list(d.get("file_refs", [])))


def parse_program(path_or_doc) -> Program:
    """Load and validate an IR document (path, JSON text, or dict).
    Invokes naming methods that are not defined anywhere stay as external
    targets; that is normal, not an error."""
    if isinstance(path_or_doc, dict):
        doc = path_or_doc
    else:
        text = Path(path_or_doc).read_text() if not str(path_or_doc).lstrip().startswith("{") \
            else str(path_or_doc)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise IrError(f"IR is not valid JSON: line {exc.lineno}: {exc.msg}") from exc
    version = doc.get("ir_version", IR_VERSION)
    if version != IR_VERSION:
        raise IrError(f"unsupported ir_version {version}")
    classes = [ClassDef(name=c["name"], super_name=c.get("super", ""),
                        interfaces=list(c.get("interfaces", [])),
                        fields=list(c.get("fields", [])))
               for c in doc.get("classes", [])]
    methods = []
    for md in doc.get("methods", []):
        where = f"{md.get('owner', '?')}->{md.get('name', '?')}"
        stmts = [_statement_from_dict(s, f"{where} stmt[{i}]")
                 for i, s in enumerate(md.get("statements", []))]
        ids = [s.id for s in stmts]
        if len(ids) != len(set(ids)):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise IrError(f"{where}: duplicate statement id {dup}")
        for s in stmts:
            if s.kind == "invoke" and not s.target_method:
                raise IrError(f"{where} stmt[{s.id}]: invoke without target_method")
        methods.append(MethodDef(
            owner=md["owner"], name=md["name"], signature=md.get("signature", "()V"),
            params=list(md.get("params", [])), statements=stmts))
    return Program(classes=classes, methods=methods)


# -- call graph -----------------------------------------------------------------

_TARGET = re.compile(r"^(?:(?P<recv>[\w/$;.]+)\.)?(?P<name>[\w<>$]+)(?:\((?P<args>.*)\))?$")


def parse_target(target: str) -> tuple[str, str, int | None]:
    """'Receiver.method(T1,T2)' -> (receiver, method, arity); parts optional."""
    m = _TARGET.match(target.strip())
    if not m:
        return "", target, None
    args = m.group("args")
    arity = None if args is None else (0 if args.strip() == "" else len(args.split(",")))
    return m.group("recv") or "", m.group("name"), arity


@dataclass
class CallGraph:
    """Nodes are method keys (or 'ext:<target>' leaves); edges carry the call
    site. Built once, read-only afterwards."""
    program: Program
    edges: list[tuple[str, int, str]] = field(default_factory=list)

    def __post_init__(self):
        self._out: dict[tuple[str, int], list[str]] = {}
        self._in: dict[str, list[tuple[str, int]]] = {}
        for caller, stmt_id, callee in self.edges:
            self._out.setdefault((caller, stmt_id), []).append(callee)
            self._in.setdefault(callee, []).append((caller, stmt_id))

    def callees(self, caller_key: str, stmt_id: int) -> list[str]:
        return self._out.get((caller_key, stmt_id), [])

    def callers(self, callee_key: str) -> list[tuple[str, int]]:
        return self._in.get(callee_key, [])

    @property
    def nodes(self) -> set[str]:
        out = {m.key for m in self.program.methods}
        for _, _, callee in self.edges:
            out.add(callee)
        return out


def build_iccg(program: Program) -> CallGraph:
    """Class-hierarchy-analysis call graph: a virtual call on C expands to the
    matching method on C and every subtype override; unresolved targets become
    external leaf nodes."""
    by_class_and_name: dict[tuple[str, str], list[MethodDef]] = {}
    for m in program.methods:
        by_class_and_name.setdefault((m.owner, m.name), []).append(m)

    def resolve_class(recv: str) -> str | None:
        if program.cls(recv):
            return recv
        for c in program.classes:
            if c.simple_name == recv:
                return c.name
        return None

    edges = []
    for m in program.methods:
        for st in m.statements:
            if st.kind != "invoke":
                continue
            recv, name, arity = parse_target(st.target_method)
            targets = []
            base = resolve_class(recv) if recv else None
            if base is not None:
                for sub in program.subtypes(base):
                    for cand in by_class_and_name.get((sub, name), []):
                        targets.append(cand.key)
            elif not recv:
                # unqualified call: any method of that name (fixture-scale IR)
                targets = [cand.key for (owner, nm), cands in by_class_and_name.items()
                           if nm == name for cand in cands]
            if targets:
                for t in sorted(set(targets)):
                    edges.append((m.key, st.id, t))
            else:
                edges.append((m.key, st.id, f"ext:{st.target_method}"))
    return CallGraph(program=program, edges=edges)
