import os
from pathlib import Path

import numpy as np
import pytest

from manifold_dynamics import dataio

_CANDIDATES = [
    os.environ.get("MNIST_DIR"),
    Path(__file__).resolve().parents[1] / "data" / "mnist",
    Path("/root/data/mnist"),
]


def find_mnist():
    for c in _CANDIDATES:
        if c and (Path(c) / "train-images-idx3-ubyte").exists() or (
            c and (Path(c) / "train-images-idx3-ubyte.gz").exists()
        ):
            return Path(c)
    return None


@pytest.fixture(scope="session")
def mnist_root():
    root = find_mnist()
    if root is None:
        pytest.skip("MNIST IDX files not found (set MNIST_DIR)")
    return root


@pytest.fixture(scope="session")
def mnist_raw(mnist_root):
    return dataio.load_mnist_family(mnist_root, "train")


def make_blobs(P=240, N=12, seed=0, sep=1.5):
    """Ten Gaussian classes; even classes on one side of a hyperplane."""
    rng = np.random.default_rng(seed)
    class_ids = rng.integers(0, 10, P)
    centers = rng.normal(0, 1, (10, N))
    centers[:, 0] = np.where(np.arange(10) % 2 == 0, sep, -sep)
    x = centers[class_ids] + rng.normal(0, 1.0, (P, N))
    x = (x - x.min()) / (x.max() - x.min())
    return dataio.RawDataset(x, class_ids, split="train", source="mnist")


@pytest.fixture
def blobs_raw():
    return make_blobs()


@pytest.fixture
def blobs(blobs_raw):
    return dataio.standardize(blobs_raw)


def write_idx_dir(root: Path, raw_train, raw_test):
    root.mkdir(parents=True, exist_ok=True)
    for split, raw in (("train", raw_train), ("test", raw_test)):
        prefix = "train" if split == "train" else "t10k"
        side = int(np.sqrt(raw.n_features))
        imgs = np.round(raw.images * 255).astype(np.uint8).reshape(len(raw), side, side)
        (root / f"{prefix}-images-idx3-ubyte").write_bytes(dataio.serialize_idx(imgs))
        (root / f"{prefix}-labels-idx1-ubyte").write_bytes(
            dataio.serialize_idx(raw.class_ids.astype(np.uint8)))
    return root


# one PASS/FAIL line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
