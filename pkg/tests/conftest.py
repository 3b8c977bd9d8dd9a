"""Session-scoped fixtures: a three-class image corpus on disk and a small
convolutional classifier trained on it, plus its quantized twin."""
import numpy as np
import pytest
from PIL import Image

from dlaudit import minigraph as mg

CLASS_NAMES = ["green", "red", "yellow"]   # folder order = label index order
IMG_SHAPE = (8, 8, 3)
PER_CLASS = 60


def class_image(label_index: int, rng: np.random.Generator) -> np.ndarray:
    """Channel-coded blobs: red lights channel 0, green channel 1, yellow both."""
    img = rng.uniform(0.0, 0.30, size=IMG_SHAPE).astype(np.float32)
    bright = rng.uniform(0.70, 1.0, size=(8, 8)).astype(np.float32)
    if CLASS_NAMES[label_index] == "red":
        img[:, :, 0] = bright
    elif CLASS_NAMES[label_index] == "green":
        img[:, :, 1] = bright
    else:  # yellow = red + green
        img[:, :, 0] = bright
        img[:, :, 1] = rng.uniform(0.70, 1.0, size=(8, 8)).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def write_corpus(root, per_class: int = PER_CLASS, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    for idx, name in enumerate(CLASS_NAMES):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            arr = (class_image(idx, rng) * 255).round().astype(np.uint8)
            Image.fromarray(arr).save(d / f"{name}_{i:03d}.png")


def corpus_arrays(per_class: int = PER_CLASS, seed: int = 0):
    """The same distribution as the on-disk corpus, as arrays (for training)."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for idx in range(len(CLASS_NAMES)):
        for _ in range(per_class):
            xs.append(class_image(idx, rng))
            ys.append(idx)
    return np.stack(xs), np.asarray(ys)


def build_light_classifier(seed: int = 5) -> mg.Graph:
    rng = np.random.default_rng(seed)
    return mg.Graph(mg.TensorSpec(IMG_SHAPE), [
        mg.OpNode("c1", "conv2d", ["input"], {"stride": 1, "padding": "same"},
                  {"weight": "c1w", "bias": "c1b"}),
        mg.OpNode("r1", "relu", ["c1"]),
        mg.OpNode("p1", "maxpool2d", ["r1"], {"ksize": 2}),
        mg.OpNode("f", "flatten", ["p1"]),
        mg.OpNode("out", "dense", ["f"], {}, {"weight": "dw", "bias": "db"}),
    ], {"c1w": (rng.standard_normal((3, 3, 3, 6)) * 0.3).astype(np.float32),
        "c1b": np.full(6, 0.01, dtype=np.float32),
        "dw": (rng.standard_normal((96, 3)) * 0.3).astype(np.float32),
        "db": np.full(3, 0.01, dtype=np.float32)})


def train_light_classifier(seed: int = 5) -> mg.Graph:
    x, y = corpus_arrays(seed=0)
    res = mg.train(build_light_classifier(seed), x, y,
                   mg.TrainConfig(lr=0.2, epochs=40, batch=16, seed=seed))
    assert res.train_accuracy >= 0.99, f"fixture model undertrained: {res.train_accuracy}"
    return res.graph


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    write_corpus(root)
    return root


@pytest.fixture(scope="session")
def light_model():
    return train_light_classifier()


@pytest.fixture(scope="session")
def light_model_pair(light_model):
    x, _ = corpus_arrays(per_class=20, seed=3)
    return light_model, mg.quantize(light_model, x.astype(np.float32))


@pytest.fixture(scope="session")
def soft_model_pair():
    """Deliberately under-trained twin pair: small margins, so tiny
    perturbation budgets (<= 0.02) produce informative success curves."""
    x, y = corpus_arrays(seed=0)
    res = mg.train(build_light_classifier(5), x, y,
                   mg.TrainConfig(lr=0.02, epochs=1, batch=16, seed=5))
    assert res.train_accuracy >= 0.85
    calib, _ = corpus_arrays(per_class=20, seed=3)
    return res.graph, mg.quantize(res.graph, calib.astype(np.float32))
