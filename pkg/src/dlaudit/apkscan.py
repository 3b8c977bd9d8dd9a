"""APK scanning: framework signature rules, model candidate discovery,
protection assessment, access typing, and deduplicated extraction.

An APK is a zip container. A file becomes a model candidate when any rule's
suffix regex or magic signature fires on it; the app as a whole is a
candidate DL app when any file or code feature fires. Candidates whose bytes
also parse as a known model format are access type A; parse failures with
supporting loader-code evidence are type B; closed-framework evidence yields
type C.
"""
from __future__ import annotations

import hashlib
import json
import re
import threading
import zipfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import metadata as md
from .dexstrings import DEX_MAGIC_PREFIX, DexError, parse_dex_strings

SCHEMA_VERSION = 1

LABELMAP_SIBLING = re.compile(r"label.*\.(txt|json)$", re.IGNORECASE)
LICENSE_SIBLING = re.compile(r"licen[cs]e|\.lic$", re.IGNORECASE)

# artifact names of well-known Android packers (the packing heuristic is
# keyed to these names only)
PACKER_LIB_NAMES = [
    "libjiagu", "libsecexe", "libsecmain", "libshell", "libmobisecy",
    "libprotectclass", "libDexHelper", "libbaiduprotect", "libnqshield",
    "libegis", "libaprotect",
]


class RulesetError(Exception):
    """Manifest failed to load or validate."""


class ApkFormatError(Exception):
    """Input is not a readable zip container."""


class ExtractionError(Exception):
    """Candidate could not be copied out consistently."""


# -- ruleset -------------------------------------------------------------------

@dataclass(frozen=True)
class MagicSignature:
    data: bytes
    at: int

    def matches(self, head: bytes) -> bool:
        return head[self.at:self.at + len(self.data)] == self.data


@dataclass(frozen=True)
class ApiSignature:
    framework: str
    kind: str                      # loader | inference
    return_type: str
    receiver_or_name: str
    param_types: tuple[str, ...]
    location: str                  # dex | native

    @property
    def tokens(self) -> tuple[str, ...]:
        """String-table tokens implied by this signature (class part + method part)."""
        return tuple(self.receiver_or_name.split("."))


@dataclass
class FrameworkRule:
    framework_name: str
    owner: str
    suffix_patterns: list[re.Pattern]
    magic_signatures: list[MagicSignature]
    lib_name_patterns: list[re.Pattern]
    lib_func_patterns: list[re.Pattern]
    mis_signatures: list[ApiSignature]
    closed_source: bool = False


@dataclass
class FrameworkRuleset:
    rules: list[FrameworkRule]
    version: int = 1

    def __post_init__(self):
        if not self.rules:
            raise RulesetError("ruleset has zero rules; nothing can ever match")
        seen = set()
        for r in self.rules:
            if r.framework_name in seen:
                raise RulesetError(f"duplicate framework name {r.framework_name!r}")
            seen.add(r.framework_name)
            if not (r.suffix_patterns or r.magic_signatures or r.lib_name_patterns):
                raise RulesetError(
                    f"rule {r.framework_name!r} has no suffix, magic, or lib pattern; it can never fire")
            for m in r.magic_signatures:
                if not m.data:
                    raise RulesetError(f"rule {r.framework_name!r} has an empty magic signature")

    def by_name(self, name: str) -> FrameworkRule:
        for r in self.rules:
            if r.framework_name == name:
                return r
        raise KeyError(name)

    def is_closed(self, name: str) -> bool:
        try:
            return self.by_name(name).closed_source
        except KeyError:
            return False

    def inference_signatures(self) -> list[ApiSignature]:
        return [s for r in self.rules for s in r.mis_signatures if s.kind == "inference"]

    def loader_signatures(self) -> list[ApiSignature]:
        return [s for r in self.rules for s in r.mis_signatures if s.kind == "loader"]


def _compile(pattern: str, where: str) -> re.Pattern:
    try:
        return re.compile(pattern)
    except re.error as exc:
        raise RulesetError(f"{where}: bad regex {pattern!r}: {exc}") from exc


def _rule_from_dict(d: dict, idx: int) -> FrameworkRule:
    where = f"rules[{idx}]"
    try:
        name = d["framework_name"]
    except KeyError:
        raise RulesetError(f"{where}: missing framework_name") from None
    magics = []
    for m in d.get("magic_signatures", []):
        if "text" in m:
            data = m["text"].encode("ascii")
        elif "hex" in m:
            data = bytes.fromhex(m["hex"])
        else:
            raise RulesetError(f"{where}: magic needs 'text' or 'hex'")
        magics.append(MagicSignature(data=data, at=int(m.get("at", 0))))
    sigs = []
    for s in d.get("mis_signatures", []):
        kind = s.get("kind")
        if kind not in ("loader", "inference"):
            raise RulesetError(f"{where}: mis kind must be loader|inference, got {kind!r}")
        if not s.get("receiver_or_name"):
            raise RulesetError(f"{where}: mis signature missing receiver_or_name")
        sigs.append(ApiSignature(
            framework=name, kind=kind, return_type=s.get("return_type", ""),
            receiver_or_name=s["receiver_or_name"],
            param_types=tuple(s.get("param_types", [])), location=s.get("location", "dex")))
    return FrameworkRule(
        framework_name=name, owner=d.get("owner", ""),
        suffix_patterns=[_compile(p, where) for p in d.get("suffix_patterns", [])],
        magic_signatures=magics,
        lib_name_patterns=[_compile(p, where) for p in d.get("lib_name_patterns", [])],
        lib_func_patterns=[_compile(p, where) for p in d.get("lib_func_patterns", [])],
        mis_signatures=sigs,
        closed_source=bool(d.get("closed_source", False)))


def ruleset_from_dict(doc: dict) -> FrameworkRuleset:
    rules = [_rule_from_dict(d, i) for i, d in enumerate(doc.get("rules", []))]
    return FrameworkRuleset(rules=rules, version=int(doc.get("version", 1)))


def load_ruleset(path) -> FrameworkRuleset:
    """Load and validate a ruleset manifest (JSON)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise RulesetError(f"cannot read ruleset {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RulesetError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return ruleset_from_dict(doc)


def default_ruleset() -> FrameworkRuleset:
    """The embedded rules: file and code features for the major mobile DL
    frameworks, plus this toolkit's own container format."""
    text = resources.files("dlaudit.data").joinpath("default_ruleset.json").read_text()
    return ruleset_from_dict(json.loads(text))


# -- matching ------------------------------------------------------------------

@dataclass(frozen=True)
class Evidence:
    framework: str
    kind: str          # suffix | magic | lib_name | lib_func | mis_string
    entry: str = ""    # APK entry the evidence was observed on
    detail: str = ""   # the pattern / token that fired

    def to_dict(self):
        return {"framework": self.framework, "kind": self.kind,
                "entry": self.entry, "detail": self.detail}


def match_file_signature(name: str, head_bytes: bytes, ruleset: FrameworkRuleset) -> list[Evidence]:
    """Every rule whose magic matches at its offset or whose suffix regex
    matches the entry name. Pure function; order is magic first, then suffix,
    rules in manifest order."""
    out = []
    for rule in ruleset.rules:
        for magic in rule.magic_signatures:
            if magic.matches(head_bytes):
                out.append(Evidence(rule.framework_name, "magic", name,
                                    magic.data.decode("ascii", "replace")))
                break
        for pat in rule.suffix_patterns:
            if pat.search(name):
                out.append(Evidence(rule.framework_name, "suffix", name, pat.pattern))
                break
    return out


@dataclass
class CodeFeatureReport:
    lib_names: dict[str, list[Evidence]] = field(default_factory=dict)
    lib_funcs: dict[str, list[Evidence]] = field(default_factory=dict)
    mis_strings: dict[str, list[Evidence]] = field(default_factory=dict)
    packer_artifacts: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def frameworks_fired(self) -> set[str]:
        return set(self.lib_names) | set(self.lib_funcs) | set(self.mis_strings)

    def fired(self, framework: str) -> bool:
        return framework in self.frameworks_fired()

    def has_mis(self) -> bool:
        return bool(self.mis_strings)

    def to_dict(self):
        def conv(d):
            return {k: [e.to_dict() for e in v] for k, v in sorted(d.items())}
        return {"lib_names": conv(self.lib_names), "lib_funcs": conv(self.lib_funcs),
                "mis_strings": conv(self.mis_strings),
                "packer_artifacts": sorted(self.packer_artifacts),
                "warnings": self.warnings}


def detect_code_features(zf: zipfile.ZipFile, ruleset: FrameworkRuleset) -> CodeFeatureReport:
    """Native-library names, exported-symbol strings, and loader/inference API
    strings in DEX string tables, per framework."""
    rep = CodeFeatureReport()
    names = [i.filename for i in zf.infolist() if not i.is_dir()]

    so_names = [n for n in names if n.endswith(".so")]
    for n in so_names:
        base = n.rsplit("/", 1)[-1]
        for rule in ruleset.rules:
            for pat in rule.lib_name_patterns:
                if pat.search(base):
                    rep.lib_names.setdefault(rule.framework_name, []).append(
                        Evidence(rule.framework_name, "lib_name", n, pat.pattern))
                    break
        for packer in PACKER_LIB_NAMES:
            if packer in base:
                rep.packer_artifacts.append(n)

    # exported-symbol / string patterns over raw library bytes
    func_rules = [(r, p) for r in ruleset.rules for p in r.lib_func_patterns]
    if func_rules:
        for n in so_names:
            try:
                blob = zf.read(n)
            except Exception as exc:
                rep.warnings.append(f"unreadable lib {n}: {exc}")
                continue
            for rule, pat in func_rules:
                m = re.search(pat.pattern.encode("ascii"), blob)
                if m:
                    rep.lib_funcs.setdefault(rule.framework_name, []).append(
                        Evidence(rule.framework_name, "lib_func", n,
                                 m.group(0).decode("ascii", "replace")))

    dex_names = [n for n in names if re.fullmatch(r"(.*/)?classes\d*\.dex", n)]
    for n in dex_names:
        try:
            blob = zf.read(n)
        except Exception as exc:
            rep.warnings.append(f"unreadable dex {n}: {exc}")
            continue
        if not blob.startswith(DEX_MAGIC_PREFIX):
            rep.warnings.append(f"{n}: not a DEX (bad magic), skipped")
            continue
        try:
            strings = set(parse_dex_strings(blob))
        except DexError as exc:
            rep.warnings.append(f"{n}: corrupt DEX header, skipped: {exc}")
            continue
        for sig in ruleset.loader_signatures() + ruleset.inference_signatures():
            if sig.location != "dex":
                continue
            if all(tok in strings for tok in sig.tokens):
                rep.mis_strings.setdefault(sig.framework, []).append(
                    Evidence(sig.framework, "mis_string", n, sig.receiver_or_name))
    return rep


# -- protection ------------------------------------------------------------------

@dataclass
class ProtectionReport:
    entropy_bits_per_byte: float = 0.0
    encrypted_suspected: bool = False
    packed_suspected: bool = False
    license_artifacts: list[str] = field(default_factory=list)
    labelmap_artifacts: list[str] = field(default_factory=list)
    remote_loading_suspected: bool = False

    def any_signal(self) -> bool:
        return self.encrypted_suspected or self.packed_suspected or self.remote_loading_suspected

    def to_dict(self):
        return {"entropy_bits_per_byte": round(self.entropy_bits_per_byte, 6),
                "encrypted_suspected": self.encrypted_suspected,
                "packed_suspected": self.packed_suspected,
                "license_artifacts": self.license_artifacts,
                "labelmap_artifacts": self.labelmap_artifacts,
                "remote_loading_suspected": self.remote_loading_suspected}


def shannon_entropy(data: bytes) -> float:
    """Bits per byte over the whole buffer; 0 for empty or constant input."""
    if not data:
        return 0.0
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    p = counts[counts > 0] / len(data)
    return float(-(p * np.log2(p)).sum())


def assess_protection(data: bytes, entry_name: str, all_entries: list[str],
                      evidence: list[Evidence], code_report: CodeFeatureReport,
                      entropy_threshold: float = 7.8) -> ProtectionReport:
    rep = ProtectionReport()
    rep.entropy_bits_per_byte = shannon_entropy(data)
    kinds = {e.kind for e in evidence}
    suffix_matched = "suffix" in kinds
    magic_matched = "magic" in kinds
    rep.encrypted_suspected = (suffix_matched and not magic_matched
                               and rep.entropy_bits_per_byte >= entropy_threshold)
    rep.packed_suspected = bool(code_report.packer_artifacts)
    rep.remote_loading_suspected = len(data) == 0 and code_report.has_mis()
    folder = entry_name.rsplit("/", 1)[0] + "/" if "/" in entry_name else ""
    for other in all_entries:
        if other == entry_name:
            continue
        if "/" in other:
            if not other.startswith(folder) or "/" in other[len(folder):]:
                continue
        elif folder:
            continue
        base = other.rsplit("/", 1)[-1]
        if LABELMAP_SIBLING.search(base):
            rep.labelmap_artifacts.append(other)
        if LICENSE_SIBLING.search(base):
            rep.license_artifacts.append(other)
    rep.labelmap_artifacts.sort()
    rep.license_artifacts.sort()
    return rep


# -- candidates -------------------------------------------------------------------

@dataclass
class ModelCandidate:
    apk_id: str
    entry_path: str
    byte_size: int
    content_hash: str
    matched_frameworks: list[Evidence]
    access_type: str = "Unknown"          # A | B | C | Unknown
    protection: ProtectionReport = field(default_factory=ProtectionReport)
    metadata: md.ModelMetadata | None = None
    metadata_error: str = ""
    low_confidence: bool = False
    excluded: bool = False
    exclusion_reason: str = ""

    def frameworks(self) -> list[str]:
        seen, out = set(), []
        for e in self.matched_frameworks:
            if e.framework not in seen:
                seen.add(e.framework)
                out.append(e.framework)
        return out

    def to_dict(self):
        return {
            "apk_id": self.apk_id, "entry_path": self.entry_path,
            "byte_size": self.byte_size, "content_hash": self.content_hash,
            "matched_frameworks": [e.to_dict() for e in self.matched_frameworks],
            "access_type": self.access_type,
            "protection": self.protection.to_dict(),
            "metadata": self.metadata.to_dict() if self.metadata else None,
            "metadata_error": self.metadata_error,
            "low_confidence": self.low_confidence,
            "excluded": self.excluded, "exclusion_reason": self.exclusion_reason,
        }


def classify_access_type(candidate: ModelCandidate, code_report: CodeFeatureReport,
                         ruleset: FrameworkRuleset, metadata_ok: bool) -> str:
    """A: parses with an open framework reader. B: open-framework code present
    but the file refuses to parse (protected). C: only closed-framework
    evidence applies. Unknown: contradictory or insufficient evidence."""
    if metadata_ok:
        return "A"
    frameworks = candidate.frameworks()
    open_f = [f for f in frameworks if not ruleset.is_closed(f)]
    closed_f = [f for f in frameworks if ruleset.is_closed(f)]
    open_code = [f for f in open_f if code_report.fired(f)]
    if open_code:
        return "B"
    closed_fired = closed_f and any(code_report.fired(f) for f in closed_f)
    if closed_f and (closed_fired or not open_f):
        return "C"
    closed_code_only = ({f for f in code_report.frameworks_fired() if ruleset.is_closed(f)}
                        and not open_f)
    if closed_code_only:
        return "C"
    return "Unknown"


@dataclass
class ScanConfig:
    entropy_threshold: float = 7.8
    metadata_gate: bool = True
    min_extract_size: int = 128
    head_len: int = 64
    max_entry_bytes: int = 256 * 1024 * 1024   # decompression cap per entry


@dataclass
class ApkScanReport:
    schema_version: int
    apk_id: str
    apk_path: str
    is_dl_app: bool
    candidates: list[ModelCandidate]
    code_features: CodeFeatureReport
    warnings: list[str]

    def active_candidates(self) -> list[ModelCandidate]:
        return [c for c in self.candidates if not c.excluded]

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "apk_id": self.apk_id, "apk_path": self.apk_path,
            "is_dl_app": self.is_dl_app,
            "candidates": [c.to_dict() for c in self.candidates],
            "code_features": self.code_features.to_dict(),
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def scan_apk(apk_path, ruleset: FrameworkRuleset, config: ScanConfig | None = None) -> ApkScanReport:
    """Scan one APK: enumerate entries, apply file rules, collect code
    features, assess protection, classify access types, apply the
    metadata-parse gate. Deterministic for fixed inputs and ruleset."""
    cfg = config or ScanConfig()
    apk_path = Path(apk_path)
    apk_bytes = apk_path.read_bytes()
    apk_id = hashlib.sha256(apk_bytes).hexdigest()
    try:
        zf = zipfile.ZipFile(apk_path)
    except zipfile.BadZipFile as exc:
        raise ApkFormatError(f"{apk_path}: not a zip container: {exc}") from exc

    warnings: list[str] = []
    with zf:
        infos = sorted((i for i in zf.infolist() if not i.is_dir()), key=lambda i: i.filename)
        names = [i.filename for i in infos]
        code_report = detect_code_features(zf, ruleset)
        candidates: list[ModelCandidate] = []
        for info in infos:
            try:
                with zf.open(info) as fh:
                    head = fh.read(cfg.head_len)
            except Exception as exc:
                warnings.append(f"unreadable entry {info.filename}: {exc}")
                continue
            file_evidence = match_file_signature(info.filename, head, ruleset)
            if not file_evidence:
                continue
            if info.file_size > cfg.max_entry_bytes:
                warnings.append(f"entry {info.filename} exceeds the "
                                f"{cfg.max_entry_bytes}-byte cap ({info.file_size}); skipped")
                continue
            try:
                data = zf.read(info)
            except Exception as exc:
                warnings.append(f"unreadable entry {info.filename}: {exc}")
                continue

            evidence = list(file_evidence)
            for fw in {e.framework for e in evidence}:
                for kind, pool in (("lib_name", code_report.lib_names),
                                   ("lib_func", code_report.lib_funcs),
                                   ("mis_string", code_report.mis_strings)):
                    for ev in pool.get(fw, []):
                        evidence.append(ev)

            cand = ModelCandidate(
                apk_id=apk_id, entry_path=info.filename, byte_size=len(data),
                content_hash=hashlib.sha256(data).hexdigest(),
                matched_frameworks=evidence)
            cand.protection = assess_protection(
                data, info.filename, names, evidence, code_report, cfg.entropy_threshold)
            metadata_ok = False
            try:
                cand.metadata = md.parse_model(data, info.filename)
                metadata_ok = True
            except md.ModelParseError as exc:
                cand.metadata_error = str(exc)
            cand.access_type = classify_access_type(cand, code_report, ruleset, metadata_ok)

            # the false-positive gate judges the file's own evidence; app-level
            # code features never rescue a file that refuses to parse
            file_kinds = {e.kind for e in file_evidence}
            suffix_only = file_kinds == {"suffix"}
            if not metadata_ok and suffix_only and not cand.protection.any_signal():
                cand.low_confidence = True
                if cfg.metadata_gate:
                    cand.excluded = True
                    cand.exclusion_reason = (
                        "suffix-only match failed the metadata parse with no protection signal")
            candidates.append(cand)

    is_dl = bool([c for c in candidates if not c.excluded]) or bool(code_report.frameworks_fired())
    return ApkScanReport(
        schema_version=SCHEMA_VERSION, apk_id=apk_id, apk_path=str(apk_path),
        is_dl_app=is_dl, candidates=candidates, code_features=code_report,
        warnings=warnings)


# -- extraction -------------------------------------------------------------------

class ExtractionIndex:
    """Hash-keyed store of extracted models. The single shared mutable piece of
    scanning; all mutation happens under one lock."""

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._index_path = self.out_dir / "index.json"
        if self._index_path.exists():
            self._entries = json.loads(self._index_path.read_text())
        else:
            self._entries = {}

    def record(self, content_hash: str, apk_id: str, entry_path: str) -> bool:
        """Register an occurrence; True when the hash was already present."""
        with self._lock:
            known = content_hash in self._entries
            occ = self._entries.setdefault(content_hash, [])
            item = {"apk_id": apk_id, "entry_path": entry_path}
            if item not in occ:
                occ.append(item)
            self._index_path.write_text(json.dumps(self._entries, sort_keys=True, indent=2) + "\n")
            return known

    def occurrences(self, content_hash: str) -> list[dict]:
        with self._lock:
            return list(self._entries.get(content_hash, []))

    def hashes(self):
        with self._lock:
            return sorted(self._entries)


def extract_model(apk_path, candidate: ModelCandidate, out_dir,
                  index: ExtractionIndex | None = None) -> dict:
    """Copy candidate bytes verbatim to <out_dir>/<sha256>.bin with a JSON
    sidecar. Returns {path, content_hash, deduplicated}."""
    index = index or ExtractionIndex(out_dir)
    with zipfile.ZipFile(apk_path) as zf:
        try:
            data = zf.read(candidate.entry_path)
        except KeyError as exc:
            raise ExtractionError(
                f"candidate {candidate.entry_path!r} vanished from {apk_path}") from exc
    digest = hashlib.sha256(data).hexdigest()
    if digest != candidate.content_hash:
        raise ExtractionError(
            f"{candidate.entry_path}: content changed since scan "
            f"(expected {candidate.content_hash[:12]}, got {digest[:12]})")
    dedup = index.record(digest, candidate.apk_id, candidate.entry_path)
    stored = Path(out_dir) / f"{digest}.bin"
    if not stored.exists():
        stored.write_bytes(data)
    sidecar = Path(out_dir) / f"{digest}.json"
    sidecar.write_text(json.dumps({
        "content_hash": digest, "byte_size": len(data),
        "occurrences": index.occurrences(digest),
        "frameworks": candidate.frameworks(),
    }, sort_keys=True, indent=2) + "\n")
    return {"path": str(stored), "content_hash": digest, "deduplicated": dedup}
