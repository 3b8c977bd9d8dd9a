"""Attack dataset construction: a local class-per-folder image corpus,
semantic label matching, output-index validation by majority vote, model
consistency checking, and seeded per-class sampling.

Corpus layout: <root>/<label>/<sample files> (PNG or PPM, decoded to float
tensors in [0, 1]). An optional manifest.json at the root may carry
{"aliases": {label: [alias, ...]}} to enrich token matching.
"""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .reasoner import tokenize


class DatasetError(Exception):
    pass


IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".bmp", ".jpg", ".jpeg"}


def decode_image(path, resize: tuple[int, ...] | None = None) -> np.ndarray:
    """Decode to float32 HWC in [0, 1]; optional (h, w, c) resize."""
    with Image.open(path) as im:
        if resize is not None and len(resize) >= 3 and resize[2] == 1:
            im = im.convert("L")
        else:
            im = im.convert("RGB") if (resize is None or len(resize) < 3 or resize[2] == 3) else im
        if resize is not None:
            im = im.resize((resize[1], resize[0]), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


@dataclass
class LabeledCorpus:
    root: Path
    classes: dict[str, list[Path]]
    aliases: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def build(cls, root) -> "LabeledCorpus":
        root = Path(root)
        if not root.is_dir():
            raise DatasetError(f"corpus root {root} is not a directory")
        aliases = {}
        manifest = root / "manifest.json"
        if manifest.exists():
            aliases = json.loads(manifest.read_text()).get("aliases", {})
        classes: dict[str, list[Path]] = {}
        for sub in sorted(p for p in root.iterdir() if p.is_dir()):
            samples = sorted(p for p in sub.iterdir()
                             if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
            if samples:
                classes[sub.name] = samples
        if not classes:
            raise DatasetError(f"corpus root {root} has no class folders with images")
        return cls(root=root, classes=classes, aliases=aliases)

    def label_tokens(self, label: str) -> list[set[str]]:
        """Token sets for the label and each of its aliases."""
        out = [set(tokenize(label))]
        out.extend(set(tokenize(a)) for a in self.aliases.get(label, []))
        return out


def token_overlap_score(a_tokens: set[str], b_tokens: set[str]) -> float:
    """Normalized shared-token count; identical non-empty sets score 1.0."""
    if not a_tokens or not b_tokens:
        return 0.0
    return len(a_tokens & b_tokens) / max(len(a_tokens), len(b_tokens))


def match_semantic_labels(model_labels: list[str], corpus: LabeledCorpus,
                          top_n: int = 5) -> dict[str, list[tuple[str, float]]]:
    """Per model label, the top-N corpus classes ranked by token overlap
    (aliases included); zero-score classes are dropped."""
    out = {}
    for label in model_labels:
        ltoks = set(tokenize(label))
        scored = []
        for cls_label in corpus.classes:
            best = max((token_overlap_score(ltoks, toks)
                        for toks in corpus.label_tokens(cls_label)), default=0.0)
            if best > 0:
                scored.append((cls_label, best))
        scored.sort(key=lambda t: (-t[1], t[0]))
        out[label] = scored[:top_n]
    return out


@dataclass
class LabelMap:
    entries: dict[int, str]
    coverage: float
    alpha1: float
    alpha2: float
    skipped_samples: int = 0

    def to_dict(self):
        return {"entries": {str(k): v for k, v in sorted(self.entries.items())},
                "coverage": self.coverage, "alpha1": self.alpha1, "alpha2": self.alpha2,
                "skipped_samples": self.skipped_samples}


def validate_labelmap(model_forward, candidates: list[tuple[np.ndarray, str]],
                      num_classes: int, alpha1: float = 0.7, alpha2: float = 0.8) -> LabelMap:
    """Feed every candidate sample; keep (argmax index <- origin label) votes
    only above the confidence gate alpha1; an index maps to its most frequent
    origin label only when that label's share exceeds alpha2. Equal top counts
    break to the lexicographically smallest label.
    """
    if not candidates:
        raise DatasetError("candidate set is empty")
    if not 0 < alpha1 < 1 or not 0 < alpha2 < 1:
        raise DatasetError(f"thresholds must lie in (0, 1): {alpha1}, {alpha2}")
    cand: dict[int, list[str]] = defaultdict(list)
    skipped = 0
    for sample, origin_label in candidates:
        try:
            scores = np.asarray(model_forward(sample), dtype=np.float64).reshape(-1)
        except Exception:
            skipped += 1
            continue
        index = int(scores.argmax())
        max_conf = float(scores[index])
        if max_conf > alpha1:
            cand[index].append(origin_label)
    entries: dict[int, str] = {}
    for index, votes in cand.items():
        count = Counter(votes)
        top_cnt = max(count.values())
        top_label = min(lbl for lbl, c in count.items() if c == top_cnt)
        tot_cnt = sum(count.values())
        if top_cnt / tot_cnt > alpha2:
            entries[index] = top_label
    return LabelMap(entries=entries, coverage=len(entries) / num_classes,
                    alpha1=alpha1, alpha2=alpha2, skipped_samples=skipped)


@dataclass
class ConsistencyResult:
    mean_l2: float
    max_l2: float
    consistent: bool
    per_sample: list[float]

    def to_dict(self):
        return {"mean_l2": self.mean_l2, "max_l2": self.max_l2,
                "consistent": self.consistent, "n_samples": len(self.per_sample)}


def consistency_check(model_a, model_b, samples, threshold: float = 0.1,
                      repeats: int = 1) -> ConsistencyResult:
    """Per-sample l2 distance between output probability vectors; consistent
    iff every distance stays within the threshold. `repeats` re-runs the whole
    protocol and keeps the worst distance per sample."""
    dists = None
    for _ in range(max(1, repeats)):
        cur = []
        for x in samples:
            pa = np.asarray(model_a(x), dtype=np.float64).reshape(-1)
            pb = np.asarray(model_b(x), dtype=np.float64).reshape(-1)
            if pa.shape != pb.shape:
                raise DatasetError(f"output arity mismatch: {pa.shape} vs {pb.shape}")
            cur.append(float(np.linalg.norm(pa - pb)))
        dists = cur if dists is None else [max(a, b) for a, b in zip(dists, cur)]
    return ConsistencyResult(
        mean_l2=float(np.mean(dists)), max_l2=float(np.max(dists)),
        consistent=bool(all(d <= threshold for d in dists)), per_sample=dists)


@dataclass
class AttackSample:
    path: str
    tensor: np.ndarray
    label: str
    label_index: int


@dataclass
class AttackDataset:
    samples: list[AttackSample]
    per_class: dict[str, int]
    warnings: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)


def sample_attack_set(labelmap: LabelMap, corpus: LabeledCorpus, k: int = 50,
                      seed: int = 0, resize: tuple[int, ...] | None = None,
                      random_fallback: bool = False,
                      input_shape: tuple[int, ...] | None = None) -> AttackDataset:
    """Seeded uniform sampling without replacement, k per mapped class.
    Classes with fewer than k samples contribute everything with a warning.
    With no mapped classes this is an error unless random_fallback requests
    seeded random tensors instead."""
    rng = np.random.default_rng(seed)
    if not labelmap.entries:
        if random_fallback:
            if input_shape is None:
                raise DatasetError("random fallback needs the model input shape")
            samples = [AttackSample(path=f"random:{i}", label="", label_index=-1,
                                    tensor=rng.uniform(0, 1, size=input_shape).astype(np.float32))
                       for i in range(k)]
            return AttackDataset(samples=samples, per_class={"": k},
                                 warnings=["no mapped classes; using random initial samples"])
        raise DatasetError("label map has no entries; attack dataset cannot be built")
    samples, per_class, warnings = [], {}, []
    for index in sorted(labelmap.entries):
        label = labelmap.entries[index]
        pool = corpus.classes.get(label, [])
        if not pool:
            warnings.append(f"class {label!r} missing from corpus")
            continue
        if len(pool) < k:
            chosen = list(pool)
            warnings.append(f"class {label!r} has only {len(pool)} samples (wanted {k})")
        else:
            pick = rng.choice(len(pool), size=k, replace=False)
            chosen = [pool[i] for i in sorted(pick)]
        per_class[label] = len(chosen)
        for p in chosen:
            samples.append(AttackSample(path=str(p), tensor=decode_image(p, resize),
                                        label=label, label_index=index))
    return AttackDataset(samples=samples, per_class=per_class, warnings=warnings)
