"""Campaign aggregation: run methods over per-model attack datasets, apply
the defeat criterion, compute per-sample and per-model success rates, and
drive the perturbation-budget sweep protocol.

Routing: models with exact gradients (float graphs) take white-box methods
directly; quantized graphs refuse them with a routing error and are attacked
through the query interface instead. Sweep curves report success-within-
budget: a sample counts at every epsilon at least as large as the smallest
one where its attack succeeded, which is what makes the recorded curves
non-decreasing.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import minigraph as mg
from .config import (ALL_METHODS, WHITEBOX_METHODS,
                     AttackConfig, AttackResult, AttackError, RoutingError)
from .whitebox import run_whitebox
from .blackbox import boundary_attack, nes_attack, oracle_from_graph, transfer_attack


def has_gradients(model) -> bool:
    return isinstance(model, mg.Graph) and not hasattr(model, "float_twin")


def asr_s(successes: int, evaluated: int) -> float:
    return successes / evaluated if evaluated else 0.0


def is_defeated(successes: int, evaluated: int, threshold: float = 0.8) -> bool:
    """A model falls to a method that beats the threshold share of the
    correctly classified samples."""
    return evaluated > 0 and asr_s(successes, evaluated) >= threshold


@dataclass
class MethodOutcome:
    status: str                     # ok | routing_error | error
    successes: int = 0
    evaluated: int = 0
    asr_s: float = 0.0
    detail: str = ""
    results: list[AttackResult] = field(default_factory=list)

    def to_dict(self):
        return {"status": self.status, "successes": self.successes,
                "evaluated": self.evaluated, "asr_s": round(self.asr_s, 6),
                "detail": self.detail}


@dataclass
class ModelCampaign:
    model_name: str
    n_samples: int
    n_correct: int
    per_method: dict[str, MethodOutcome]
    defeated_by: list[str]
    defeated: bool

    def to_dict(self):
        return {"model_name": self.model_name, "n_samples": self.n_samples,
                "n_correct": self.n_correct,
                "per_method": {k: v.to_dict() for k, v in sorted(self.per_method.items())},
                "defeated_by": self.defeated_by, "defeated": self.defeated}


@dataclass
class AttackCampaignReport:
    per_model: dict[str, ModelCampaign]
    asr_m: float
    methods: list[str]
    excluded_models: list[str] = field(default_factory=list)

    def to_dict(self):
        return {"per_model": {k: v.to_dict() for k, v in sorted(self.per_model.items())},
                "asr_m": round(self.asr_m, 6), "methods": self.methods,
                "excluded_models": self.excluded_models}


def _correctly_classified(model, dataset):
    keep = []
    for idx, s in enumerate(dataset.samples):
        if s.label_index < 0:
            continue
        if mg.forward(model, s.tensor).top_index == s.label_index:
            keep.append(idx)
    return keep


def run_method_on_model(model, dataset, method: str, config: AttackConfig,
                        keep_results: bool = False) -> MethodOutcome:
    """Execute one method over a model's dataset, or return the documented
    routing error; never silently skips."""
    cfg = config.replace(method=method)
    correct = _correctly_classified(model, dataset)
    if method in WHITEBOX_METHODS and not has_gradients(model):
        return MethodOutcome(status="routing_error", detail=(
            "white-box method refused: model exposes no exact gradients; "
            "use nes/boundary/transfer"))
    outcome = MethodOutcome(status="ok", evaluated=len(correct))
    if method == "transfer":
        oracle = oracle_from_graph(model, cfg.query_budget)
        tensors = [dataset.samples[i].tensor for i in correct]
        ids = [dataset.samples[i].path for i in correct]
        substitute = _default_substitute(model, cfg.seed)
        all_tensors = np.stack([s.tensor for s in dataset.samples])
        report = transfer_attack(oracle, substitute, all_tensors, tensors, cfg, ids)
        outcome.results = report.results if keep_results else []
        outcome.successes = sum(1 for r in report.results if r.success)
        outcome.detail = (f"substitute {SUBSTITUTE_ARCHITECTURE}, "
                          f"train acc {report.substitute_train_accuracy:.2f}, "
                          f"{report.labeling_queries} labeling queries")
    else:
        for pos, idx in enumerate(correct):
            s = dataset.samples[idx]
            rng = np.random.default_rng([cfg.seed, pos])
            if method in WHITEBOX_METHODS:
                res = run_whitebox(model, s.tensor, cfg, s.path, rng=rng)
            elif method == "nes":
                res = nes_attack(oracle_from_graph(model, cfg.query_budget),
                                 s.tensor, cfg, s.path, rng=rng)
            elif method == "boundary":
                try:
                    res = boundary_attack(
                        oracle_from_graph(model, cfg.query_budget, label_only=True),
                        s.tensor, cfg, s.path, rng=rng)
                except AttackError as exc:
                    res = AttackResult(sample_id=s.path, method=method, success=False,
                                       adversarial=None, perturbation_norm=0.0,
                                       queries_used=0, original_index=s.label_index,
                                       original_confidence=0.0, diagnostic=str(exc))
            else:
                raise AttackError(f"unknown method {method!r}")
            outcome.successes += int(res.success)
            if keep_results:
                outcome.results.append(res)
    outcome.asr_s = asr_s(outcome.successes, outcome.evaluated)
    return outcome


SUBSTITUTE_ARCHITECTURE = "small-cnn (conv3x3x8 / relu / maxpool2 / dense)"


def _default_substitute(model, seed: int) -> mg.Graph:
    """Desk-scale convolutional substitute matching the target's input/output
    arity. For non-image inputs it degrades to a dense net."""
    rng = np.random.default_rng(seed)
    spec = model.input_spec
    k = model.num_classes
    if len(spec.shape) == 3 and spec.shape[0] >= 2 and spec.shape[1] >= 2:
        h, w, c = spec.shape
        flat = (h // 2) * (w // 2) * 8
        return mg.Graph(spec, [
            mg.OpNode("c1", "conv2d", ["input"], {"stride": 1, "padding": "same"},
                      {"weight": "c1w", "bias": "c1b"}),
            mg.OpNode("r1", "relu", ["c1"]),
            mg.OpNode("p1", "maxpool2d", ["r1"], {"ksize": 2}),
            mg.OpNode("f", "flatten", ["p1"]),
            mg.OpNode("d", "dense", ["f"], {}, {"weight": "dw", "bias": "db"}),
        ], {"c1w": (rng.standard_normal((3, 3, c, 8)) * 0.2).astype(np.float32),
            "c1b": np.zeros(8, dtype=np.float32),
            "dw": (rng.standard_normal((flat, k)) * 0.2).astype(np.float32),
            "db": np.zeros(k, dtype=np.float32)})
    n_in = int(np.prod(spec.shape))
    hidden = 32
    return mg.Graph(spec, [
        mg.OpNode("f", "flatten", ["input"]),
        mg.OpNode("d1", "dense", ["f"], {}, {"weight": "w1", "bias": "b1"}),
        mg.OpNode("r1", "relu", ["d1"]),
        mg.OpNode("d2", "dense", ["r1"], {}, {"weight": "w2", "bias": "b2"}),
    ], {"w1": (rng.standard_normal((n_in, hidden)) * 0.1).astype(np.float32),
        "b1": np.zeros(hidden, dtype=np.float32),
        "w2": (rng.standard_normal((hidden, k)) * 0.1).astype(np.float32),
        "b2": np.zeros(k, dtype=np.float32)})


def evaluate_campaign(models: dict, datasets: dict, methods: list[str],
                      config: AttackConfig, keep_results: bool = False) -> AttackCampaignReport:
    """Per model and method: attack every correctly classified sample, then
    apply the defeat criterion. Models with empty datasets are excluded and
    reported, not silently dropped."""
    for m in methods:
        if m not in ALL_METHODS:
            raise AttackError(f"unknown method {m!r}; choose from {ALL_METHODS}")
    per_model, excluded = {}, []
    for name in sorted(models):
        model = models[name]
        dataset = datasets.get(name)
        if dataset is None or len(dataset.samples) == 0:
            excluded.append(name)
            continue
        correct = _correctly_classified(model, dataset)
        outcomes = {}
        for method in methods:
            outcomes[method] = run_method_on_model(model, dataset, method, config,
                                                   keep_results=keep_results)
        defeated_by = sorted(m for m, o in outcomes.items()
                             if o.status == "ok" and
                             is_defeated(o.successes, o.evaluated, config.defeat_threshold))
        per_model[name] = ModelCampaign(
            model_name=name, n_samples=len(dataset.samples), n_correct=len(correct),
            per_method=outcomes, defeated_by=defeated_by, defeated=bool(defeated_by))
    n = len(per_model)
    asr_m = (sum(1 for c in per_model.values() if c.defeated) / n) if n else 0.0
    return AttackCampaignReport(per_model=per_model, asr_m=asr_m,
                                methods=list(methods), excluded_models=excluded)


# -- perturbation budget sweep ---------------------------------------------------

@dataclass
class SweepRow:
    model: str
    method: str
    epsilon: float
    asr_s: float
    successes: int
    evaluated: int

    def to_dict(self):
        return {"model": self.model, "method": self.method, "epsilon": self.epsilon,
                "asr_s": round(self.asr_s, 6), "successes": self.successes,
                "evaluated": self.evaluated}


@dataclass
class SweepReport:
    rows: list[SweepRow]
    deltas: list[dict] = field(default_factory=list)   # float-minus-quantized per epsilon

    def curve(self, model: str, method: str) -> list[tuple[float, float]]:
        return [(r.epsilon, r.asr_s) for r in self.rows
                if r.model == model and r.method == method]

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows], "deltas": self.deltas}


def budget_sweep(model_pairs: dict, dataset, eps_values, methods: list[str],
                 config: AttackConfig) -> SweepReport:
    """For each named (float graph, optional quantized twin): craft examples
    on the float graph per epsilon and record success-within-budget curves.
    The quantized twin is evaluated by transferring the float-crafted tensors
    through its forward pass (exact gradients through integer ops are refused
    by design), and float-minus-quantized deltas are emitted as data."""
    eps_values = [float(e) for e in eps_values]
    if any(e < 0 for e in eps_values):
        raise AttackError("epsilon values must be non-negative")
    if sorted(eps_values) != eps_values:
        raise AttackError("epsilon grid must be ascending")
    rows: list[SweepRow] = []
    deltas = []
    for name in sorted(model_pairs):
        fgraph, qgraph = model_pairs[name]
        if not has_gradients(fgraph):
            raise RoutingError(f"sweep model {name!r} must be a float graph")
        correct = _correctly_classified(fgraph, dataset)
        q_correct = set(_correctly_classified(qgraph, dataset)) if qgraph is not None else set()
        for method in methods:
            if method not in WHITEBOX_METHODS:
                raise AttackError(f"budget sweep drives white-box methods, not {method!r}")
            # first epsilon (ascending) at which each sample's attack succeeds
            first_float: dict[int, float] = {}
            first_quant: dict[int, float] = {}
            for eps in eps_values:
                cfg = config.replace(method=method, epsilon=eps, step_size=None)
                for pos, idx in enumerate(correct):
                    s = dataset.samples[idx]
                    need_f = idx not in first_float
                    need_q = qgraph is not None and idx in q_correct and idx not in first_quant
                    if not (need_f or need_q) or eps == 0:
                        continue
                    res = run_whitebox(fgraph, s.tensor, cfg, s.path,
                                       rng=np.random.default_rng([config.seed, pos]))
                    if need_f and res.success:
                        first_float[idx] = eps
                    if need_q and res.adversarial is not None:
                        q = mg.forward(qgraph, res.adversarial)
                        if q.top_index != s.label_index:
                            first_quant[idx] = eps
            for eps in eps_values:
                n_f = sum(1 for e in first_float.values() if e <= eps)
                rows.append(SweepRow(model=name, method=method, epsilon=eps,
                                     asr_s=asr_s(n_f, len(correct)),
                                     successes=n_f, evaluated=len(correct)))
                if qgraph is not None:
                    n_q = sum(1 for e in first_quant.values() if e <= eps)
                    rows.append(SweepRow(model=f"{name}:quantized", method=method,
                                         epsilon=eps, asr_s=asr_s(n_q, len(q_correct)),
                                         successes=n_q, evaluated=len(q_correct)))
                    deltas.append({"model": name, "method": method, "epsilon": eps,
                                   "float_minus_quantized":
                                       round(asr_s(n_f, len(correct)) -
                                             asr_s(n_q, len(q_correct)), 6)})
    return SweepReport(rows=rows, deltas=deltas)
