"""Query-only attacks. These functions receive an oracle object, never a
model: score-based gradient estimation (antithetic Gaussian sampling),
decision-based boundary walking, and substitute-model transfer. The oracle
wrapper owns the query counter; its budget check is atomic, so parallel
attackers share one budget safely.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from .. import minigraph as mg
from .config import AttackConfig, AttackResult, AttackError, BudgetExhausted, perturbation_norm
from .whitebox import run_whitebox


class ScoreOracle:
    """Counts and limits queries to a score function x -> class score vector."""

    def __init__(self, fn, budget: int):
        self._fn = fn
        self.budget = int(budget)
        self.used = 0
        self._lock = threading.Lock()

    def _spend(self, n=1):
        with self._lock:
            if self.used + n > self.budget:
                raise BudgetExhausted(f"query budget {self.budget} exhausted")
            self.used += n

    def scores(self, x) -> np.ndarray:
        self._spend()
        return np.asarray(self._fn(x), dtype=np.float64).reshape(-1)

    def label(self, x) -> int:
        return int(self.scores(x).argmax())

    @property
    def remaining(self) -> int:
        return self.budget - self.used


class LabelOracle(ScoreOracle):
    """Top-1 label only; scores() is unavailable by contract."""

    def scores(self, x):
        raise AttackError("label-only oracle exposes no scores")

    def label(self, x) -> int:
        self._spend()
        return int(np.asarray(self._fn(x)).reshape(-1).argmax())


def oracle_from_graph(graph, budget: int, label_only: bool = False):
    """Wrap a graph behind the query interface (scores = softmax probs)."""
    fn = lambda x: mg.forward(graph, np.asarray(x, dtype=np.float32)).probs
    return LabelOracle(fn, budget) if label_only else ScoreOracle(fn, budget)


# -- score-based -----------------------------------------------------------------

def nes_gradient_estimate(f, x: np.ndarray, sigma: float, pairs: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Antithetic Gaussian estimator of grad f: mean of (f(x+su)-f(x-su))u/(2s)."""
    g = np.zeros_like(x, dtype=np.float64)
    for _ in range(pairs):
        u = rng.standard_normal(x.shape)
        g += (f(x + sigma * u) - f(x - sigma * u)) * u
    return g / (2.0 * sigma * pairs)


def nes_attack(oracle: ScoreOracle, x, config: AttackConfig, sample_id: str = "",
               rng: np.random.Generator | None = None) -> AttackResult:
    """Estimated-gradient sign descent on the original class score, projected
    to the epsilon ball. Uses only oracle.scores()."""
    rng = rng or np.random.default_rng(config.seed)
    x0 = np.asarray(x, dtype=np.float32)

    def fail(diag, orig_idx=-1, orig_conf=0.0):
        return AttackResult(sample_id=sample_id, method="nes", success=False,
                            adversarial=None, perturbation_norm=0.0,
                            queries_used=oracle.used, original_index=orig_idx,
                            original_confidence=orig_conf, diagnostic=diag)

    if oracle.remaining < 1:
        return fail("budget exhausted before the first query")
    s0 = oracle.scores(x0)
    orig_idx, orig_conf = int(s0.argmax()), float(s0.max())
    eps = config.epsilon
    if eps == 0:
        return fail("zero perturbation budget", orig_idx, orig_conf)

    def f(v):
        return float(oracle.scores(np.clip(v, config.clip_min, config.clip_max))[orig_idx])

    adv = x0.astype(np.float64).copy()
    alpha = config.nes_step_size
    per_step = 2 * config.nes_pairs + 1
    try:
        while oracle.remaining >= per_step:
            g = nes_gradient_estimate(f, adv, config.nes_sigma, config.nes_pairs, rng)
            adv = adv - alpha * np.sign(g)
            adv = x0 + np.clip(adv - x0, -eps, eps)
            adv = np.clip(adv, config.clip_min, config.clip_max)
            s = oracle.scores(adv)
            if int(s.argmax()) != orig_idx:
                a32 = adv.astype(np.float32)
                return AttackResult(
                    sample_id=sample_id, method="nes", success=True, adversarial=a32,
                    perturbation_norm=perturbation_norm(a32 - x0, config.norm),
                    queries_used=oracle.used, original_index=orig_idx,
                    original_confidence=orig_conf, adversarial_index=int(s.argmax()),
                    adversarial_confidence=float(s.max()))
    except BudgetExhausted:
        pass
    r = fail("budget exhausted without a label flip", orig_idx, orig_conf)
    r.adversarial = adv.astype(np.float32)
    r.perturbation_norm = perturbation_norm(adv - x0, config.norm)
    return r


# -- decision-based ----------------------------------------------------------------

@dataclass
class BoundaryTrace:
    accepted: list[np.ndarray] = field(default_factory=list)
    distances: list[float] = field(default_factory=list)


def boundary_attack(oracle, x, config: AttackConfig, sample_id: str = "",
                    rng: np.random.Generator | None = None, start=None,
                    trace: BoundaryTrace | None = None) -> AttackResult:
    """Decision-based walk using only top-1 labels: orthogonal perturbation on
    the sphere around the original, then a contraction step toward it; only
    points that stay adversarial are ever accepted. Returns the closest
    adversarial found within the budget."""
    rng = rng or np.random.default_rng(config.seed)
    x0 = np.asarray(x, dtype=np.float64)
    orig_idx = oracle.label(x0)

    adv = None
    if start is not None:
        start = np.asarray(start, dtype=np.float64)
        if oracle.label(start) != orig_idx:
            adv = start.copy()
    if adv is None:
        for _ in range(config.boundary_max_starts):
            cand = rng.uniform(config.clip_min, config.clip_max, size=x0.shape)
            if oracle.label(cand) != orig_idx:
                adv = cand
                break
        if adv is None:
            raise AttackError(
                f"no adversarial starting point found in {config.boundary_max_starts} draws")
    if trace is not None:
        trace.accepted.append(adv.copy())

    start_dist = float(np.linalg.norm(adv - x0))
    best, best_dist = adv.copy(), start_dist
    delta = config.boundary_spherical_step
    eps_s = config.boundary_source_step
    window = max(4, config.boundary_adapt_window)
    orth_hits, src_hits = [], []

    try:
        while oracle.remaining >= 1:
            d = x0 - adv
            dist = float(np.linalg.norm(d))
            if dist < 1e-9:
                break
            dhat = d / dist
            eta = rng.standard_normal(x0.shape)
            eta -= (eta * dhat).sum() * dhat
            nrm = float(np.linalg.norm(eta))
            if nrm < 1e-12:
                continue
            eta *= delta * dist / nrm
            cand = adv + eta
            diff = cand - x0
            cand = x0 + diff * (dist / max(float(np.linalg.norm(diff)), 1e-12))
            cand = np.clip(cand, config.clip_min, config.clip_max)
            ok_orth = oracle.label(cand) != orig_idx
            orth_hits.append(ok_orth)
            if len(orth_hits) >= window:
                rate = sum(orth_hits) / len(orth_hits)
                delta = min(delta * 1.3, 1.0) if rate > 0.5 else max(delta * 0.7, 1e-4)
                orth_hits.clear()
            if not ok_orth:
                continue
            moved = cand + eps_s * (x0 - cand)
            moved = np.clip(moved, config.clip_min, config.clip_max)
            if oracle.remaining < 1:
                adv = cand
                if trace is not None:
                    trace.accepted.append(adv.copy())
                break
            ok_src = oracle.label(moved) != orig_idx
            src_hits.append(ok_src)
            if len(src_hits) >= window:
                rate = sum(src_hits) / len(src_hits)
                eps_s = min(eps_s * 1.3, 0.9) if rate > 0.25 else max(eps_s * 0.5, 1e-5)
                src_hits.clear()
            adv = moved if ok_src else cand
            if trace is not None:
                trace.accepted.append(adv.copy())
            cur = float(np.linalg.norm(adv - x0))
            if cur < best_dist:
                best, best_dist = adv.copy(), cur
            if trace is not None:
                trace.distances.append(cur)
    except BudgetExhausted:
        pass

    a32 = best.astype(np.float32)
    return AttackResult(
        sample_id=sample_id, method="boundary", success=bool(best_dist <= start_dist),
        adversarial=a32, perturbation_norm=perturbation_norm(a32 - x0, "l2"),
        queries_used=oracle.used, original_index=orig_idx, original_confidence=0.0,
        diagnostic=f"start={start_dist:.4f} final={best_dist:.4f}")


# -- transfer ----------------------------------------------------------------------

@dataclass
class TransferReport:
    results: list[AttackResult]
    substitute_train_accuracy: float
    labeling_queries: int
    evaluation_queries: int
    transfer_rate: float

    def to_dict(self):
        return {"substitute_train_accuracy": self.substitute_train_accuracy,
                "labeling_queries": self.labeling_queries,
                "evaluation_queries": self.evaluation_queries,
                "transfer_rate": self.transfer_rate,
                "results": [r.to_dict() for r in self.results]}


def transfer_attack(oracle, substitute: mg.Graph, transfer_inputs: np.ndarray,
                    attack_inputs, config: AttackConfig,
                    sample_ids: list[str] | None = None,
                    pretrained: bool = False) -> TransferReport:
    """Label a transfer set by querying the oracle, train the substitute on
    those labels, craft white-box examples on the substitute, then measure
    every candidate against the oracle. Success is defined on the oracle.
    With pretrained=True the substitute is used as given (no labeling or
    training queries)."""
    labeling_queries = 0
    if pretrained:
        trained_graph, train_acc = substitute, float("nan")
    else:
        transfer_inputs = np.asarray(transfer_inputs, dtype=np.float32)
        if oracle.remaining < config.transfer_batch:
            raise AttackError(
                f"query budget {oracle.remaining} cannot label one batch "
                f"of {config.transfer_batch}")
        n_label = min(len(transfer_inputs), oracle.remaining)
        labels = []
        before = oracle.used
        for v in transfer_inputs[:n_label]:
            labels.append(oracle.label(v))
        labeling_queries = oracle.used - before
        trained = mg.train(substitute, transfer_inputs[:n_label], np.asarray(labels),
                           mg.TrainConfig(lr=config.transfer_lr, epochs=config.transfer_epochs,
                                          batch=config.transfer_batch, seed=config.seed))
        trained_graph, train_acc = trained.graph, trained.train_accuracy

    inner = config.replace(method=config.transfer_inner_method)
    results = []
    before_eval = oracle.used
    hits = 0
    for idx, v in enumerate(attack_inputs):
        sid = sample_ids[idx] if sample_ids else f"transfer:{idx}"
        sub_res = run_whitebox(trained_graph, v, inner, sid,
                               rng=np.random.default_rng([config.seed, idx]))
        adv = sub_res.adversarial if sub_res.adversarial is not None else np.asarray(v)
        try:
            orig_label = oracle.label(v)
            adv_label = oracle.label(adv)
        except BudgetExhausted:
            results.append(AttackResult(
                sample_id=sid, method="transfer", success=False, adversarial=None,
                perturbation_norm=0.0, queries_used=oracle.used,
                original_index=-1, original_confidence=0.0,
                diagnostic="budget exhausted during oracle evaluation"))
            continue
        success = adv_label != orig_label
        hits += int(success)
        results.append(AttackResult(
            sample_id=sid, method="transfer", success=success,
            adversarial=adv.astype(np.float32),
            perturbation_norm=perturbation_norm(adv - np.asarray(v, np.float64), config.norm),
            queries_used=oracle.used, original_index=orig_label,
            original_confidence=0.0, adversarial_index=adv_label))
    evaluated = [r for r in results if "budget exhausted" not in r.diagnostic]
    rate = hits / len(evaluated) if evaluated else 0.0
    return TransferReport(results=results,
                          substitute_train_accuracy=train_acc,
                          labeling_queries=labeling_queries,
                          evaluation_queries=oracle.used - before_eval,
                          transfer_rate=rate)
