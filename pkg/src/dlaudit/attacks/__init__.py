"""Adversarial example generators and campaign machinery."""

from .config import (AttackConfig, AttackResult, AttackError, RoutingError,
                     BudgetExhausted, perturbation_norm,
                     WHITEBOX_METHODS, BLACKBOX_METHODS, ALL_METHODS)
from .whitebox import gradient_sign_attack, deepfool, carlini_wagner, run_whitebox
from .blackbox import (ScoreOracle, LabelOracle, oracle_from_graph,
                       nes_gradient_estimate, nes_attack, boundary_attack,
                       BoundaryTrace, transfer_attack, TransferReport)
from .campaign import (evaluate_campaign, budget_sweep, run_method_on_model,
                       AttackCampaignReport, ModelCampaign, MethodOutcome,
                       SweepReport, SweepRow, asr_s, is_defeated, has_gradients)

__all__ = [
    "AttackConfig", "AttackResult", "AttackError", "RoutingError", "BudgetExhausted",
    "perturbation_norm", "WHITEBOX_METHODS", "BLACKBOX_METHODS", "ALL_METHODS",
    "gradient_sign_attack", "deepfool", "carlini_wagner", "run_whitebox",
    "ScoreOracle", "LabelOracle", "oracle_from_graph", "nes_gradient_estimate",
    "nes_attack", "boundary_attack", "BoundaryTrace", "transfer_attack", "TransferReport",
    "evaluate_campaign", "budget_sweep", "run_method_on_model",
    "AttackCampaignReport", "ModelCampaign", "MethodOutcome",
    "SweepReport", "SweepRow", "asr_s", "is_defeated", "has_gradients",
]
