import gzip
import os
import struct
from pathlib import Path

import numpy as np
import pytest

from blindprune.dataset import FILES, MnistSplit
from blindprune.network import Layer, MlpModel, PruneMask, build_model
from blindprune.numerics import Activation

REPO = Path(__file__).resolve().parents[1]


def idx_bytes(array, type_code=0x08):
    array = np.asarray(array)
    header = bytes([0, 0, type_code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.astype(np.uint8).tobytes()


def write_fake_mnist(directory, n_train=200, n_test=100, seed=0, compress=False):
    """Class-dependent blobs in IDX form: learnable, tiny, and fast."""
    rng = np.random.default_rng(seed)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prototypes = rng.random((10, 28 * 28)) < 0.2
    for split, n in (("train", n_train), ("test", n_test)):
        labels = np.arange(n) % 10
        rng.shuffle(labels)
        noise = rng.random((n, 28 * 28)) < 0.05
        images = ((prototypes[labels] ^ noise) * 255).reshape(n, 28, 28)
        for kind, payload in (("images", images), ("labels", labels)):
            name = FILES[f"{split}_{kind}"]
            data = idx_bytes(payload)
            if compress:
                (directory / (name + ".gz")).write_bytes(gzip.compress(data))
            else:
                (directory / name).write_bytes(data)
    return directory


def find_mnist():
    candidates = [os.environ.get("BLINDPRUNE_DATA_DIR"), REPO / "data" / "mnist",
                  Path("/root/data/mnist")]
    for c in candidates:
        if c and (Path(c) / FILES["train_images"]).exists() or (
                c and (Path(c) / (FILES["train_images"] + ".gz")).exists()):
            return Path(c)
    return None


@pytest.fixture
def fake_mnist_dir(tmp_path):
    return write_fake_mnist(tmp_path / "mnist")


@pytest.fixture(scope="session")
def mnist_dir():
    path = find_mnist()
    if path is None:
        pytest.skip("MNIST IDX files not found; set BLINDPRUNE_DATA_DIR")
    return path


def toy_model(activation="relu", dims=(6, 4, 3), seed=0, bias_scale=0.3):
    model = build_model(dims, Activation(activation), seed=seed)
    rng = np.random.default_rng(seed + 100)
    for layer in model.layers:
        layer.bias[:] = rng.normal(0, bias_scale, layer.bias.shape).astype(np.float32)
    return model


def toy_split(n=60, dim=6, classes=3, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    centers = rng.normal(0, 1.5, (classes, dim))
    images = (centers[labels] + rng.normal(0, 0.5, (n, dim))).astype(np.float32)
    return MnistSplit(images, labels.astype(np.int64))


def single_layer(weights, activation="identity", bias=0.0):
    w = np.asarray(weights, dtype=np.float32).reshape(-1, 1)
    return MlpModel([Layer(w, np.full(1, bias, np.float32), Activation(activation))])


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
