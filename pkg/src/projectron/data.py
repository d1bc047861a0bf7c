"""Labelled image collections: MNIST IDX files and manifest-described directories."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .radon import preprocess

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    """Inputs ``x`` (images ``(n, side, side)`` or features ``(n, d)``) with labels ``y``."""

    x: np.ndarray
    y: np.ndarray
    classes: int
    split: str = "train"
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.intp)
        if len(self.x) != len(self.y):
            raise DatasetError(f"{len(self.x)} inputs but {len(self.y)} labels")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.classes):
            raise DatasetError(f"labels must lie in [0, {self.classes})")

    def __len__(self):
        return len(self.y)

    @property
    def width(self) -> int:
        return int(np.prod(self.x.shape[1:]))

    def flat(self) -> np.ndarray:
        return self.x.reshape(len(self.x), -1)

    def take(self, idx, split: str | None = None) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.classes,
                       split or self.split, list(self.class_names))

    def with_inputs(self, x) -> "Dataset":
        return Dataset(x, self.y, self.classes, self.split, list(self.class_names))


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    header_len = 4 * (1 + ndim)
    if len(raw) < header_len:
        raise DatasetError(f"{path}: truncated header")
    header = np.frombuffer(raw[:header_len], dtype=">u4")
    if header[0] != magic:
        raise DatasetError(f"{path}: bad magic number {header[0]} (expected {magic})")
    dims = tuple(int(d) for d in header[1:])
    expected = int(np.prod(dims))
    body = raw[header_len:]
    if len(body) != expected:
        raise DatasetError(
            f"{path}: header promises {expected} bytes of data, file holds {len(body)}"
        )
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_mnist_idx(image_path, label_path, split: str = "train") -> Dataset:
    images = _read_idx(image_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(label_path, IDX_LABEL_MAGIC, 1)
    if len(images) != len(labels):
        raise DatasetError(
            f"{image_path} holds {len(images)} images but {label_path} holds {len(labels)} labels"
        )
    classes = max(10, int(labels.max()) + 1) if len(labels) else 10
    return Dataset(images / 255.0, labels, classes, split,
                   [str(k) for k in range(classes)])


def load_mnist_dir(root, split: str) -> Dataset:
    images, labels = MNIST_FILES[split]
    root = Path(root)
    return load_mnist_idx(root / images, root / labels, split)


def is_mnist_dir(root) -> bool:
    root = Path(root)
    return root.is_dir() and all((root / f).exists() for pair in MNIST_FILES.values() for f in pair)


def read_manifest(path) -> dict[str, str]:
    """``relative_path,class_name`` rows; an optional header row is skipped."""
    entries: dict[str, str] = {}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'relative_path,class_name'")
            rel, name = row[0].strip(), row[1].strip()
            if lineno == 1 and (rel, name) == ("relative_path", "class_name"):
                continue
            if rel in entries:
                raise DatasetError(f"{path}:{lineno}: duplicate path {rel!r}")
            entries[rel] = name
    return entries


def read_image(path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            if img.mode in ("P", "CMYK", "YCbCr", "LAB", "HSV"):
                img = img.convert("RGB")
            return np.asarray(img, dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise DatasetError(f"{path}: unreadable image ({exc})") from exc


def load_image_dir(root, manifest, target_side: int, class_names=None,
                   split: str = "train") -> Dataset:
    """Load the images a manifest lists, preprocessed to ``target_side`` squared.

    ``manifest`` is a path to a manifest CSV or a mapping of relative path to
    class name.  Items are ordered by path and classes are indexed by sorted
    name unless ``class_names`` fixes the class list.
    """
    root = Path(root)
    entries = read_manifest(manifest) if isinstance(manifest, (str, Path)) else dict(manifest)
    if not entries:
        raise DatasetError("manifest lists no images")
    if class_names is None:
        class_names = sorted(set(entries.values()))
    else:
        class_names = list(class_names)
        unknown = sorted(set(entries.values()) - set(class_names))
        if unknown:
            raise DatasetError(f"manifest uses unknown classes: {', '.join(unknown)}")
    index = {name: k for k, name in enumerate(class_names)}
    images, labels = [], []
    for rel in sorted(entries):
        path = root / rel
        if not path.is_file():
            raise DatasetError(f"{path}: missing file")
        images.append(preprocess(read_image(path), target_side))
        labels.append(index[entries[rel]])
    return Dataset(np.stack(images), labels, max(2, len(class_names)), split, class_names)


def split_off(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded random split into (kept, held out); the held-out part has floor(fraction * n) items."""
    n = len(dataset)
    k = int(np.floor(fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    held, kept = np.sort(perm[:k]), np.sort(perm[k:])
    return dataset.take(kept), dataset.take(held, split="holdout")


def subsample(dataset: Dataset, size: int, seed: int) -> Dataset:
    if size >= len(dataset):
        return dataset
    idx = np.sort(np.random.default_rng(seed).choice(len(dataset), size=size, replace=False))
    return dataset.take(idx)


def preprocess_images(dataset: Dataset, target_side: int) -> Dataset:
    """Apply :func:`preprocess` to every image in an image dataset."""
    if dataset.x.ndim != 3:
        raise DatasetError(f"expected an image dataset, got inputs of shape {dataset.x.shape}")
    return dataset.with_inputs(np.stack([preprocess(img, target_side) for img in dataset.x]))
