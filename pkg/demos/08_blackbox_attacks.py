"""Query-only attacks: estimated gradients, decision boundary walking, and
substitute-model transfer.

Everything here talks to the model exclusively through a budget-counting
query oracle, exactly as an attacker without the weights would.
"""
import numpy as np

from dlaudit.attacks import (AttackConfig, BoundaryTrace, boundary_attack,
                             nes_attack, nes_gradient_estimate, oracle_from_graph,
                             transfer_attack)
from dlaudit.attacks.campaign import _default_substitute

from _common import corpus_arrays, trained_classifier

rng = np.random.default_rng(0)

print("== gradient estimation from score queries (antithetic sampling)")
c = rng.standard_normal(16)
est = nes_gradient_estimate(lambda v: float(c @ v), np.zeros(16),
                            sigma=0.01, pairs=200, rng=np.random.default_rng(1))
cos = float(est @ c / (np.linalg.norm(est) * np.linalg.norm(c)))
print(f"   linear oracle, 200 pairs: cosine(estimate, true) = {cos:.3f}")

print("\ntraining the subject model ...")
graph = trained_classifier()
x, y = corpus_arrays(per_class=2, seed=9)

print("\n== score-based attack (queries only)")
oracle = oracle_from_graph(graph, budget=6000)
res = nes_attack(oracle, x[0],
                 AttackConfig(method="nes", epsilon=0.3, nes_pairs=25,
                              nes_step_size=0.03, query_budget=6000),
                 rng=np.random.default_rng(2))
print(f"   success={res.success} after {res.queries_used} queries "
      f"(l-inf {res.perturbation_norm:.3f})")

print("\n== decision-based attack (labels only)")
oracle = oracle_from_graph(graph, budget=8000, label_only=True)
trace = BoundaryTrace()
res = boundary_attack(oracle, x[0],
                      AttackConfig(method="boundary", query_budget=8000, seed=3),
                      rng=np.random.default_rng(3), trace=trace)
print(f"   {res.diagnostic}; accepted {len(trace.accepted)} intermediate points, "
      f"all adversarial by construction")

print("\n== substitute transfer attack")
# transfer needs the biggest budget of the three: examples crafted on the
# substitute must survive the architecture gap to the oracle's model
transfer_set, _ = corpus_arrays(per_class=30, seed=10)
oracle = oracle_from_graph(graph, budget=100_000)
rep = transfer_attack(oracle, _default_substitute(graph, 0), transfer_set,
                      [xi for xi in x],
                      AttackConfig(method="transfer", transfer_inner_method="pgd",
                                   epsilon=0.5, steps=15, query_budget=100_000, seed=0))
print(f"   labeled {rep.labeling_queries} transfer samples by querying; "
      f"substitute train accuracy {rep.substitute_train_accuracy:.2f}")
print(f"   candidates transferring to the oracle at budget 0.5: {rep.transfer_rate:.0%}")
