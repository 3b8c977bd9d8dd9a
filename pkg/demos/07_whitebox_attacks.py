"""White-box attacks and the perturbation-budget sweep.

Runs the six gradient-based methods against the demo classifier at a matched
budget, then sweeps small budgets on a float/quantized pair to show the
success-within-budget curves and their gap.
"""
import numpy as np

from dlaudit import minigraph as mg
from dlaudit.attacks import AttackConfig, budget_sweep, evaluate_campaign
from dlaudit.dataset import AttackDataset, AttackSample

from _common import CLASS_NAMES, corpus_arrays, trained_classifier

print("training the subject model ...")
graph = trained_classifier()

x, y = corpus_arrays(per_class=8, seed=24)
samples = [AttackSample(path=f"s{i}", tensor=xi, label=CLASS_NAMES[yi], label_index=int(yi))
           for i, (xi, yi) in enumerate(zip(x, y))]
data = AttackDataset(samples=samples, per_class={})

cfg = AttackConfig(epsilon=0.25, steps=15, cw_iterations=120,
                   cw_binary_search_steps=5, seed=0)
methods = ["fgsm", "bim", "mim", "pgd", "deepfool", "cw"]
print(f"\nattacking {len(samples)} samples at l-inf budget {cfg.epsilon}:")
report = evaluate_campaign({"demo": graph}, {"demo": data}, methods, cfg)
camp = report.per_model["demo"]
for m in methods:
    o = camp.per_method[m]
    print(f"  {m:>9}: asr_s {o.asr_s:.2f}  ({o.successes}/{o.evaluated})")
print(f"defeated (any method >= 80%): {camp.defeated} (by {camp.defeated_by})")

print("\nsweep 0..0.02 stride 0.001 on an under-trained float/quantized pair:")
from _common import fresh_classifier
xt, yt = corpus_arrays(per_class=60, seed=0)
soft = mg.train(fresh_classifier(), xt, yt,
                mg.TrainConfig(lr=0.02, epochs=1, batch=16, seed=5)).graph
calib, _ = corpus_arrays(per_class=20, seed=3)
qsoft = mg.quantize(soft, calib.astype(np.float32))
sweep = budget_sweep({"soft": (soft, qsoft)}, data,
                     [round(0.001 * i, 3) for i in range(21)], ["fgsm"],
                     AttackConfig(seed=0))
print("  eps    float  quantized  delta")
for (e, f), (_, q) in zip(sweep.curve("soft", "fgsm"),
                          sweep.curve("soft:quantized", "fgsm")):
    print(f"  {e:0.3f}  {f:5.2f}  {q:9.2f}  {f - q:+0.2f}")
