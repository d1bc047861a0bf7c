import os
import struct
from pathlib import Path

import numpy as np
import pytest

MNIST_DIR = Path(os.environ.get("MNIST_DIR", "/root/data/mnist"))


@pytest.fixture(scope="session")
def mnist_dir():
    from projectron.data import is_mnist_dir

    if not is_mnist_dir(MNIST_DIR):
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set MNIST_DIR)")
    return MNIST_DIR


def write_idx(path, array, magic):
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    Path(path).write_bytes(header + array.tobytes())


def bar_images(n, side=28, seed=0, classes=3):
    """Noisy bars: class 0 horizontal, 1 vertical, 2 diagonal."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    images = rng.integers(0, 40, size=(n, side, side)).astype(np.uint8)
    for img, label in zip(images, labels):
        pos = rng.integers(side // 4, 3 * side // 4)
        if label == 0:
            img[pos - 1:pos + 2, 4:-4] = 255
        elif label == 1:
            img[4:-4, pos - 1:pos + 2] = 255
        else:
            for k in range(4, side - 4):
                img[k, max(0, k - 1):k + 2] = 255
    return images, labels


@pytest.fixture
def fake_mnist(tmp_path):
    """A small directory of IDX files laid out like MNIST."""
    root = tmp_path / "mnist"
    root.mkdir()
    train_x, train_y = bar_images(120, seed=1)
    test_x, test_y = bar_images(60, seed=2)
    write_idx(root / "train-images-idx3-ubyte", train_x, 2051)
    write_idx(root / "train-labels-idx1-ubyte", train_y, 2049)
    write_idx(root / "t10k-images-idx3-ubyte", test_x, 2051)
    write_idx(root / "t10k-labels-idx1-ubyte", test_y, 2049)
    return root
