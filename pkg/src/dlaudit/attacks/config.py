"""Attack configuration and result records.

Hyperparameter defaults are data: they live in data/default_attack_config.json
and are read once at import. Constructing AttackConfig() yields exactly the
packaged defaults; a user file with the same schema can override any subset.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

_D = json.loads(resources.files("dlaudit.data")
                .joinpath("default_attack_config.json").read_text())

WHITEBOX_METHODS = ("fgsm", "bim", "mim", "pgd", "deepfool", "cw")
BLACKBOX_METHODS = ("nes", "boundary", "transfer")
ALL_METHODS = WHITEBOX_METHODS + BLACKBOX_METHODS


class AttackError(Exception):
    pass


class RoutingError(AttackError):
    """White-box method requested on a model without exact gradients."""


class BudgetExhausted(AttackError):
    """Query budget ran out mid-attack."""


@dataclass
class AttackConfig:
    method: str = "fgsm"
    norm: str = _D["norm"]
    epsilon: float = _D["epsilon"]
    steps: int = _D["steps"]
    step_size: float | None = None            # None: epsilon * step_size_fraction
    step_size_fraction: float = _D["step_size_fraction"]
    momentum_decay: float = _D["momentum_decay"]
    cw_c: float = _D["cw"]["c"]
    cw_kappa: float = _D["cw"]["kappa"]
    cw_iterations: int = _D["cw"]["iterations"]
    cw_lr: float = _D["cw"]["lr"]
    cw_binary_search_steps: int = _D["cw"]["binary_search_steps"]
    deepfool_max_iters: int = _D["deepfool"]["max_iters"]
    deepfool_overshoot: float = _D["deepfool"]["overshoot"]
    nes_sigma: float = _D["nes"]["sigma"]
    nes_pairs: int = _D["nes"]["pairs"]
    nes_step_size: float = _D["nes"]["step_size"]
    boundary_spherical_step: float = _D["boundary"]["spherical_step"]
    boundary_source_step: float = _D["boundary"]["source_step"]
    boundary_max_starts: int = _D["boundary"]["max_starts"]
    boundary_adapt_window: int = _D["boundary"]["adapt_window"]
    transfer_inner_method: str = _D["transfer"]["inner_method"]
    transfer_epochs: int = _D["transfer"]["epochs"]
    transfer_lr: float = _D["transfer"]["lr"]
    transfer_batch: int = _D["transfer"]["batch"]
    query_budget: int = _D["query_budget"]
    defeat_threshold: float = _D["defeat_threshold"]
    samples_per_class: int = _D["samples_per_class"]
    clip_min: float = _D["clip_min"]
    clip_max: float = _D["clip_max"]
    seed: int = 0
    target: int | None = None                 # targeted variant when set

    def __post_init__(self):
        if self.epsilon < 0:
            raise AttackError(f"epsilon must be non-negative, got {self.epsilon}")
        if not 0 < self.defeat_threshold <= 1:
            raise AttackError(f"defeat threshold must be in (0, 1]: {self.defeat_threshold}")
        if self.method in BLACKBOX_METHODS and self.query_budget <= 0 \
                and self.method != "nes":
            raise AttackError("query budget must be positive for black-box methods")
        if self.norm not in ("linf", "l2"):
            raise AttackError(f"norm must be linf or l2, got {self.norm!r}")

    @property
    def resolved_step_size(self) -> float:
        return self.step_size if self.step_size is not None \
            else self.epsilon * self.step_size_fraction

    def replace(self, **kw) -> "AttackConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return AttackConfig(**d)

    @classmethod
    def from_file(cls, path, **overrides) -> "AttackConfig":
        doc = json.loads(Path(path).read_text())
        flat = {}
        for key, val in doc.items():
            if isinstance(val, dict):
                for k2, v2 in val.items():
                    flat[f"{key}_{k2}"] = v2
            else:
                flat[key] = val
        known = {f.name for f in fields(cls)}
        flat = {k: v for k, v in flat.items() if k in known}
        flat.update(overrides)
        return cls(**flat)


def perturbation_norm(delta: np.ndarray, norm: str) -> float:
    d = np.asarray(delta, dtype=np.float64).reshape(-1)
    return float(np.abs(d).max()) if norm == "linf" else float(np.linalg.norm(d))


@dataclass
class AttackResult:
    sample_id: str
    method: str
    success: bool
    adversarial: np.ndarray | None
    perturbation_norm: float
    queries_used: int
    original_index: int
    original_confidence: float
    adversarial_index: int | None = None
    adversarial_confidence: float | None = None
    diagnostic: str = ""

    def to_dict(self, with_tensor=False):
        d = {"sample_id": self.sample_id, "method": self.method, "success": self.success,
             "perturbation_norm": self.perturbation_norm, "queries_used": self.queries_used,
             "original_index": self.original_index,
             "original_confidence": self.original_confidence,
             "adversarial_index": self.adversarial_index,
             "adversarial_confidence": self.adversarial_confidence,
             "diagnostic": self.diagnostic}
        if with_tensor and self.adversarial is not None:
            d["adversarial"] = self.adversarial.tolist()
        return d
