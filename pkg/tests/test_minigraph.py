"""Engine correctness: forward semantics, reverse-mode vs finite differences,
training behavior, and shape safety."""
import numpy as np
import pytest

from dlaudit import minigraph as mg
from gradcheck import fd_gradient, max_rel_error, spaced_values

REL_TOL = 1e-4


def single_op_graph(op, shape, rng, attrs=None, params=None):
    node = mg.OpNode("n0", op, ["input"] if op != "add" else ["input", "n_pre"], attrs or {}, {})
    nodes = [node]
    tensors = {}
    if op == "add":
        # feed the second operand through a relu of the same input
        nodes = [mg.OpNode("n_pre", "relu", ["input"]),
                 mg.OpNode("n0", "add", ["input", "n_pre"])]
    if op == "conv2d":
        w = rng.standard_normal((3, 3, shape[2], 4))
        tensors = {"w": w, "b": rng.standard_normal(4)}
        node.params = {"weight": "w", "bias": "b"}
        node.attrs = {"stride": 1, "padding": "same"}
    if op == "dense":
        w = rng.standard_normal((shape[0], 5))
        tensors = {"w": w, "b": rng.standard_normal(5)}
        node.params = {"weight": "w", "bias": "b"}
    return mg.Graph(mg.TensorSpec(shape), nodes, tensors)


OP_CASES = [
    ("conv2d", (6, 6, 2)),
    ("dense", (7,)),
    ("relu", (5, 3)),
    ("maxpool2d", (6, 6, 2)),
    ("avgpool2d", (6, 6, 2)),
    ("flatten", (4, 3, 2)),
    ("softmax", (6,)),
    ("add", (4, 4, 1)),
    ("normalize", (5, 5, 2)),
]


@pytest.mark.parametrize("op,shape", OP_CASES, ids=[c[0] for c in OP_CASES])
def test_each_op_gradient_matches_finite_differences(op, shape):
    rng = np.random.default_rng(7)
    attrs = {"mean": [0.25, 0.5], "std": [0.5, 2.0]} if op == "normalize" else None
    g = single_op_graph(op, shape, rng, attrs=attrs)
    n = int(np.prod(shape))
    x = spaced_values(n, rng).reshape(shape)
    out_shape = g.output_shape
    seed_vec = rng.standard_normal(out_shape)

    def loss(v):
        acts, _ = mg.forward_acts(g, v[None, ...])
        return float((acts[g.output_name][0] * seed_vec).sum())

    acts, ctxs = mg.forward_acts(g, x[None, ...])
    if g.nodes[-1].op == "softmax":
        # chain the seed through softmax's own backward, then into the graph
        from dlaudit.minigraph import ops as kernels
        dlogits = kernels.softmax_backward(seed_vec[None, ...], acts[g.output_name])[0]
        grads = mg.backprop_from_logits(g, x[None, ...], dlogits, acts, ctxs)
    else:
        grads = mg.backprop_from_logits(g, x[None, ...], seed_vec[None, ...], acts, ctxs)
    analytic = grads.wrt_input[0]
    numeric = fd_gradient(loss, x.astype(np.float64))
    assert max_rel_error(analytic, numeric) < REL_TOL

    for pname, pg in grads.wrt_params.items():
        base = g.params[pname]

        def ploss(v, pname=pname, base=base):
            g.params[pname] = v
            try:
                acts2, _ = mg.forward_acts(g, x[None, ...])
                return float((acts2[g.output_name][0] * seed_vec).sum())
            finally:
                g.params[pname] = base

        pnum = fd_gradient(ploss, base.astype(np.float64))
        assert max_rel_error(pg, pnum) < REL_TOL


def small_random_graph(seed):
    """Three distinct architectures covering the whole op set in combination."""
    rng = np.random.default_rng(seed)
    if seed % 3 == 0:
        spec = mg.TensorSpec((6, 6, 1))
        nodes = [
            mg.OpNode("norm", "normalize", ["input"], {"mean": 0.4, "std": 0.3}),
            mg.OpNode("c1", "conv2d", ["norm"], {"stride": 1, "padding": "same"},
                      {"weight": "c1w", "bias": "c1b"}),
            mg.OpNode("r1", "relu", ["c1"]),
            mg.OpNode("p1", "maxpool2d", ["r1"], {"ksize": 2}),
            mg.OpNode("f", "flatten", ["p1"]),
            mg.OpNode("out", "dense", ["f"], {}, {"weight": "dw", "bias": "db"}),
        ]
        params = {"c1w": rng.standard_normal((3, 3, 1, 3)) * 0.5, "c1b": rng.standard_normal(3) * 0.1,
                  "dw": rng.standard_normal((27, 4)) * 0.5, "db": rng.standard_normal(4) * 0.1}
    elif seed % 3 == 1:
        spec = mg.TensorSpec((4, 4, 2))
        nodes = [
            mg.OpNode("c1", "conv2d", ["input"], {"stride": 1, "padding": "same"},
                      {"weight": "c1w", "bias": "c1b"}),
            mg.OpNode("r1", "relu", ["c1"]),
            mg.OpNode("res", "add", ["c1", "r1"]),
            mg.OpNode("p1", "avgpool2d", ["res"], {"ksize": 2}),
            mg.OpNode("f", "flatten", ["p1"]),
            mg.OpNode("out", "dense", ["f"], {}, {"weight": "dw", "bias": "db"}),
            mg.OpNode("sm", "softmax", ["out"]),
        ]
        params = {"c1w": rng.standard_normal((3, 3, 2, 2)) * 0.5, "c1b": rng.standard_normal(2) * 0.1,
                  "dw": rng.standard_normal((8, 3)) * 0.5, "db": rng.standard_normal(3) * 0.1}
    else:
        spec = mg.TensorSpec((10,))
        nodes = [
            mg.OpNode("d1", "dense", ["input"], {}, {"weight": "w1", "bias": "b1"}),
            mg.OpNode("r1", "relu", ["d1"]),
            mg.OpNode("d2", "dense", ["r1"], {}, {"weight": "w2", "bias": "b2"}),
        ]
        params = {"w1": rng.standard_normal((10, 8)) * 0.5, "b1": rng.standard_normal(8) * 0.1,
                  "w2": rng.standard_normal((8, 3)) * 0.5, "b2": rng.standard_normal(3) * 0.1}
    return mg.Graph(spec, nodes, params)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_random_graph_input_gradient_matches_finite_differences(seed):
    g = small_random_graph(seed)
    rng = np.random.default_rng(100 + seed)
    x = spaced_values(int(np.prod(g.input_spec.shape)), rng).reshape(g.input_spec.shape) * 0.4

    target = 1

    def loss(v):
        res = mg.forward(g, v)
        p = res.probs
        return float(-np.log(max(p[target], 1e-300)))

    analytic = mg.input_gradient(g, x, loss="cross_entropy", target=target)
    numeric = fd_gradient(loss, x.astype(np.float64), h=1e-4)
    assert max_rel_error(analytic, numeric) < REL_TOL


def test_identity_dense_returns_input_as_logits():
    g = mg.Graph(mg.TensorSpec((4,)),
                 [mg.OpNode("d", "dense", ["input"], {}, {"weight": "w", "bias": "b"})],
                 {"w": np.eye(4, dtype=np.float32), "b": np.zeros(4, dtype=np.float32)})
    x = np.array([0.1, -0.4, 2.0, 0.7], dtype=np.float32)
    res = mg.forward(g, x)
    assert np.allclose(res.logits, x)
    assert res.top_index == 2


def test_zero_logits_give_uniform_probs():
    k = 5
    g = mg.Graph(mg.TensorSpec((3,)),
                 [mg.OpNode("d", "dense", ["input"], {}, {"weight": "w", "bias": "b"})],
                 {"w": np.zeros((3, k), dtype=np.float32), "b": np.zeros(k, dtype=np.float32)})
    res = mg.forward(g, np.ones(3, dtype=np.float32))
    assert np.allclose(res.probs, 1.0 / k)


def test_two_layer_net_matches_hand_computed_product():
    rng = np.random.default_rng(42)
    w1 = rng.standard_normal((6, 5)).astype(np.float32)
    b1 = rng.standard_normal(5).astype(np.float32)
    w2 = rng.standard_normal((5, 3)).astype(np.float32)
    b2 = rng.standard_normal(3).astype(np.float32)
    g = mg.Graph(mg.TensorSpec((6,)), [
        mg.OpNode("d1", "dense", ["input"], {}, {"weight": "w1", "bias": "b1"}),
        mg.OpNode("r", "relu", ["d1"]),
        mg.OpNode("d2", "dense", ["r"], {}, {"weight": "w2", "bias": "b2"}),
    ], {"w1": w1, "b1": b1, "w2": w2, "b2": b2})
    x = rng.standard_normal(6).astype(np.float32)
    expected = np.maximum(x @ w1 + b1, 0) @ w2 + b2   # plain-numpy recomputation
    assert np.allclose(mg.forward(g, x).logits, expected, atol=1e-6)


def test_linear_softmax_ce_gradient_matches_analytic_formula():
    # d/dx of -log softmax(Wx + b)[t] is W (softmax(z) - onehot(t))
    rng = np.random.default_rng(3)
    w = rng.standard_normal((4, 3))
    b = rng.standard_normal(3)
    g = mg.Graph(mg.TensorSpec((4,)),
                 [mg.OpNode("d", "dense", ["input"], {}, {"weight": "w", "bias": "b"})],
                 {"w": w, "b": b})
    x = rng.standard_normal(4)
    z = x @ w + b
    s = np.exp(z - z.max())
    s /= s.sum()
    t = 2
    expected = w @ (s - np.eye(3)[t])
    got = mg.input_gradient(g, x, loss="cross_entropy", target=t)
    assert np.allclose(got, expected, atol=1e-10)


def test_constant_output_graph_has_zero_gradient():
    g = mg.Graph(mg.TensorSpec((4,)),
                 [mg.OpNode("d", "dense", ["input"], {}, {"weight": "w", "bias": "b"})],
                 {"w": np.zeros((4, 3)), "b": np.array([0.3, 0.1, -0.2])})
    grad = mg.input_gradient(g, np.ones(4), loss="cross_entropy", target=0)
    assert np.all(grad == 0)


def test_softmax_probs_normalized_and_bounded():
    rng = np.random.default_rng(11)
    for _ in range(20):
        g = small_random_graph(2)
        x = rng.standard_normal(g.input_spec.shape)
        p = mg.forward(g, x).probs
        assert abs(p.sum() - 1.0) <= 1e-6
        assert np.all(p >= 0) and np.all(p <= 1)


def test_forward_and_gradient_bit_deterministic():
    g = small_random_graph(0)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(g.input_spec.shape).astype(np.float32)
    a1, a2 = mg.forward(g, x), mg.forward(g, x)
    assert np.array_equal(a1.logits, a2.logits) and np.array_equal(a1.probs, a2.probs)
    g1 = mg.input_gradient(g, x, target=0)
    g2 = mg.input_gradient(g, x, target=0)
    assert np.array_equal(g1, g2)


def test_shape_mismatch_reported_at_construction_not_run():
    with pytest.raises(mg.ShapeError) as err:
        mg.Graph(mg.TensorSpec((4,)),
                 [mg.OpNode("d", "dense", ["input"], {}, {"weight": "w", "bias": "b"})],
                 {"w": np.zeros((5, 3)), "b": np.zeros(3)})
    assert "5" in str(err.value) and "4" in str(err.value)


def test_forward_shape_mismatch_names_expected_and_got():
    g = small_random_graph(2)
    with pytest.raises(mg.ShapeError) as err:
        mg.forward(g, np.zeros((3, 3)))
    assert "(3, 3)" in str(err.value) and "(10,)" in str(err.value)


# -- training -----------------------------------------------------------------

def blobs_2d(seed=0, n=60):
    """Two linearly separable 2-D blobs; separability re-verified by a perceptron."""
    rng = np.random.default_rng(seed)
    a = rng.normal((-1.5, -1.5), 0.4, size=(n, 2))
    b = rng.normal((1.5, 1.5), 0.4, size=(n, 2))
    x = np.vstack([a, b]).astype(np.float32)
    y = np.array([0] * n + [1] * n)
    return x, y


def perceptron_separable(x, y, iters=2000):
    # independent separability oracle: classic perceptron converges iff separable
    w = np.zeros(x.shape[1] + 1)
    xa = np.hstack([x, np.ones((len(x), 1))])
    sign = np.where(y == 1, 1.0, -1.0)
    for _ in range(iters):
        wrong = np.nonzero(sign * (xa @ w) <= 0)[0]
        if len(wrong) == 0:
            return True
        w += sign[wrong[0]] * xa[wrong[0]]
    return False


def mlp_2d(seed=1):
    rng = np.random.default_rng(seed)
    return mg.Graph(mg.TensorSpec((2,)), [
        mg.OpNode("d1", "dense", ["input"], {}, {"weight": "w1", "bias": "b1"}),
        mg.OpNode("r", "relu", ["d1"]),
        mg.OpNode("d2", "dense", ["r"], {}, {"weight": "w2", "bias": "b2"}),
    ], {"w1": rng.standard_normal((2, 8)).astype(np.float32) * 0.5,
        "b1": np.zeros(8, dtype=np.float32),
        "w2": rng.standard_normal((8, 2)).astype(np.float32) * 0.5,
        "b2": np.zeros(2, dtype=np.float32)})


def test_train_reaches_high_accuracy_on_separable_blobs():
    x, y = blobs_2d()
    assert perceptron_separable(x, y), "fixture must be linearly separable"
    res = mg.train(mlp_2d(), x, y, mg.TrainConfig(lr=0.1, epochs=200, batch=16, seed=0))
    assert res.train_accuracy >= 0.95


def test_train_lr_zero_leaves_parameters_unchanged():
    x, y = blobs_2d()
    g = mlp_2d()
    before = {k: v.copy() for k, v in g.params.items()}
    res = mg.train(g, x, y, mg.TrainConfig(lr=0.0, epochs=3, batch=8, seed=0))
    for k in before:
        assert np.array_equal(res.graph.params[k], before[k])
        assert np.array_equal(g.params[k], before[k])  # original untouched too


def test_train_same_seed_bitwise_identical():
    x, y = blobs_2d()
    r1 = mg.train(mlp_2d(), x, y, mg.TrainConfig(lr=0.05, epochs=10, batch=8, seed=9))
    r2 = mg.train(mlp_2d(), x, y, mg.TrainConfig(lr=0.05, epochs=10, batch=8, seed=9))
    for k in r1.graph.params:
        assert np.array_equal(r1.graph.params[k], r2.graph.params[k])


def test_train_empty_dataset_rejected():
    with pytest.raises(mg.GraphError):
        mg.train(mlp_2d(), np.zeros((0, 2)), np.zeros((0,)), mg.TrainConfig())
