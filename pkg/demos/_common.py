"""Shared builders for the demo scripts: a three-class image corpus on disk
and a small convolutional classifier trained on it."""
from pathlib import Path

import numpy as np
from PIL import Image

from dlaudit import minigraph as mg

CLASS_NAMES = ["green", "red", "yellow"]
IMG_SHAPE = (8, 8, 3)

WORKDIR = Path(__file__).parent / "_workdir"


def class_image(label_index, rng):
    img = rng.uniform(0.0, 0.30, size=IMG_SHAPE).astype(np.float32)
    bright = rng.uniform(0.70, 1.0, size=(8, 8)).astype(np.float32)
    if CLASS_NAMES[label_index] == "red":
        img[:, :, 0] = bright
    elif CLASS_NAMES[label_index] == "green":
        img[:, :, 1] = bright
    else:
        img[:, :, 0] = bright
        img[:, :, 1] = rng.uniform(0.70, 1.0, size=(8, 8)).astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def corpus_arrays(per_class=60, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for idx in range(len(CLASS_NAMES)):
        for _ in range(per_class):
            xs.append(class_image(idx, rng))
            ys.append(idx)
    return np.stack(xs), np.asarray(ys)


def write_corpus(root, per_class=60, seed=0):
    root = Path(root)
    rng = np.random.default_rng(seed)
    for idx, name in enumerate(CLASS_NAMES):
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            arr = (class_image(idx, rng) * 255).round().astype(np.uint8)
            Image.fromarray(arr).save(d / f"{name}_{i:03d}.png")
    return root


def fresh_classifier(seed=5):
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


def trained_classifier(seed=5):
    x, y = corpus_arrays()
    res = mg.train(fresh_classifier(seed), x, y,
                   mg.TrainConfig(lr=0.2, epochs=40, batch=16, seed=seed))
    print(f"  (trained demo classifier: {res.train_accuracy:.1%} train accuracy)")
    return res.graph
