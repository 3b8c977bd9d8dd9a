"""Post-training uint8 quantization and the float-vs-quantized comparison.

Trains the demo classifier, quantizes it with min/max calibration, saves and
reloads both containers, and runs the output-consistency protocol.
"""
import numpy as np

from dlaudit import minigraph as mg
from dlaudit.dataset import consistency_check

from _common import WORKDIR, corpus_arrays, trained_classifier

WORKDIR.mkdir(exist_ok=True)
print("training the demo classifier ...")
graph = trained_classifier()

calib, _ = corpus_arrays(per_class=20, seed=3)
qgraph = mg.quantize(graph, calib.astype(np.float32))

wq = qgraph.qparams_w[sorted(qgraph.qparams_w)[0]]
print(f"\nexample weight grid: scale={wq.scale:.6f} zero_point={wq.zero_point}")
print(f"input grid:          scale={qgraph.input_qp.scale:.6f} "
      f"zero_point={qgraph.input_qp.zero_point}")

x, y = corpus_arrays(per_class=10, seed=4)
agree = sum(int(mg.forward(graph, xi).top_index == mg.forward(qgraph, xi).top_index)
            for xi in x)
print(f"\ntop-1 agreement float vs quantized: {agree}/{len(x)}")

res = consistency_check(lambda v: mg.forward(graph, v).probs,
                        lambda v: mg.forward(qgraph, v).probs,
                        list(x), threshold=0.1, repeats=10)
print(f"output consistency: mean l2 {res.mean_l2:.5f}, max {res.max_l2:.5f} "
      f"-> consistent at 0.1: {res.consistent}")

fp, qp = WORKDIR / "demo_float.mg", WORKDIR / "demo_quant.mg"
mg.save_graph(graph, fp)
mg.save_graph(qgraph, qp)
back = mg.load_graph(qp)
print(f"\nsaved {fp.name} ({fp.stat().st_size} bytes) and {qp.name} "
      f"({qp.stat().st_size} bytes)")
print(f"quant params survive the round trip: {back.input_qp == qgraph.input_qp}")

print("\nexact gradients through the quantized graph are refused:")
try:
    mg.input_gradient(qgraph, x[0], target=0)
except mg.GradientUnavailableError as exc:
    print(f"  GradientUnavailableError: {exc}")
