"""Datasets: a seeded Gaussian-cluster generator and CIFAR pickle readers."""

from __future__ import annotations

import pickle
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int
    image_shape: Optional[Tuple[int, int, int]] = None  # (C, H, W) for flattened images

    @property
    def input_dim(self) -> int:
        return self.x_train.shape[1]


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    num_classes: int = 10
    train_per_class: int = 100
    test_per_class: int = 100
    input_dim: int = 16
    separation: float = 3.0
    noise: float = 1.0
    seed: int = 0


def simplex_means(num_classes: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Class means at unit distance from the origin, pairwise equidistant when possible.

    The vertices of a centered regular simplex are rotated into ``dim``
    dimensions by a random orthonormal map. When ``dim < num_classes`` there
    is no room for that and seeded random unit directions are used instead.
    """
    k = num_classes
    if dim >= k:
        verts = np.eye(k) - 1.0 / k
        q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
        means = verts @ q.T
    else:
        means = rng.standard_normal((k, dim))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    return means / np.where(norms == 0, 1.0, norms)


def generate_synthetic(spec: SyntheticDatasetSpec) -> Dataset:
    """Gaussian clusters around ``separation``-scaled simplex vertices.

    Samples are ordered class by class; everything is fixed by ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    means = spec.separation * simplex_means(spec.num_classes, spec.input_dim, rng)

    def draw(per_class):
        y = np.repeat(np.arange(spec.num_classes), per_class)
        x = means[y] + spec.noise * rng.standard_normal((y.size, spec.input_dim))
        return x, y

    x_train, y_train = draw(spec.train_per_class)
    x_test, y_test = draw(spec.test_per_class)
    return Dataset(x_train, y_train, x_test, y_test, spec.num_classes)


_CIFAR_LAYOUTS = {
    "cifar10": ("cifar-10-batches-py", [f"data_batch_{i}" for i in range(1, 6)], ["test_batch"], b"labels"),
    "cifar100": ("cifar-100-python", ["train"], ["test"], b"fine_labels"),
}
_CIFAR_CLASSES = {"cifar10": 10, "cifar100": 100}


def _read_batches(folder: Path, names, label_key):
    xs, ys = [], []
    for name in names:
        path = folder / name
        if not path.exists():
            raise FileNotFoundError(f"expected CIFAR batch file {path}")
        with open(path, "rb") as fh:
            d = pickle.load(fh, encoding="bytes")
        xs.append(np.asarray(d[b"data"], dtype=np.uint8))
        ys.append(np.asarray(d[label_key], dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def load_cifar(name: str, root) -> Dataset:
    """Read CIFAR-10/100 from the canonical ``*-python`` pickle layout under ``root``.

    Pixels are scaled to [0, 1] and standardized per channel with training
    set statistics; rows stay flattened in (C, H, W) order.
    """
    if name not in _CIFAR_LAYOUTS:
        raise ConfigError("dataset.name", f"unknown image dataset {name!r}")
    sub, train_names, test_names, label_key = _CIFAR_LAYOUTS[name]
    folder = Path(root) / sub
    if not folder.is_dir():
        folder = Path(root)
    x_tr, y_tr = _read_batches(folder, train_names, label_key)
    x_te, y_te = _read_batches(folder, test_names, label_key)
    shape = (3, 32, 32)
    x_tr = x_tr.reshape(-1, *shape).astype(np.float64) / 255.0
    x_te = x_te.reshape(-1, *shape).astype(np.float64) / 255.0
    mean = x_tr.mean(axis=(0, 2, 3), keepdims=True)
    std = x_tr.std(axis=(0, 2, 3), keepdims=True)
    x_tr = ((x_tr - mean) / std).reshape(len(x_tr), -1)
    x_te = ((x_te - mean) / std).reshape(len(x_te), -1)
    return Dataset(x_tr, y_tr, x_te, y_te, _CIFAR_CLASSES[name], shape)


def augment_images(x: np.ndarray, shape, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random crop after zero padding plus random horizontal flip, per row."""
    c, h, w = shape
    imgs = x.reshape(len(x), c, h, w)
    padded = np.pad(imgs, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(imgs)
    dy = rng.integers(0, 2 * pad + 1, size=len(x))
    dx = rng.integers(0, 2 * pad + 1, size=len(x))
    flip = rng.random(len(x)) < 0.5
    for i in range(len(x)):
        crop = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out.reshape(len(x), -1)
