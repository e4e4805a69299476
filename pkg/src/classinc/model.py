"""Feature extractor, linear classifier head and the class schedule.

The classifier is ``o(x) = W^T phi(x) (+ b)`` where ``phi`` is a small
rectified MLP and ``W`` has one column per class seen so far. Columns are
ordered by the step in which their class arrived, so the first
``old_count`` columns are the old classes.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidArgumentError, ProtocolError


@dataclass(frozen=True)
class ClassifierHead:
    weights: np.ndarray  # d x C_total
    old_count: int
    new_count: int
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise InvalidArgumentError(f"weights must be 2-D, got shape {w.shape}")
        if self.old_count < 0 or self.new_count < 1:
            raise InvalidArgumentError(
                f"need old_count >= 0 and new_count >= 1, got {self.old_count}, {self.new_count}")
        if self.old_count + self.new_count != w.shape[1]:
            raise InvalidArgumentError(
                f"old_count + new_count = {self.old_count + self.new_count} "
                f"but weights have {w.shape[1]} columns")
        object.__setattr__(self, "weights", w)
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=np.float64)
            if b.shape != (w.shape[1],):
                raise InvalidArgumentError(f"bias shape {b.shape} does not match {w.shape[1]} classes")
            object.__setattr__(self, "bias", b)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[1]

    def replace(self, **changes) -> "ClassifierHead":
        fields = dict(weights=self.weights, old_count=self.old_count,
                      new_count=self.new_count, bias=self.bias)
        fields.update(changes)
        return ClassifierHead(**fields)


@dataclass(frozen=True)
class InitSpec:
    """How freshly added head columns are initialized.

    ``kind`` is ``"uniform"`` (zero-mean, half-width ``scale`` defaulting to
    ``1/sqrt(d)``) or ``"zero"``.
    """

    kind: str = "uniform"
    scale: Optional[float] = None
    seed: int = 0

    def sample(self, d: int, n: int) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros((d, n))
        if self.kind == "uniform":
            a = self.scale if self.scale is not None else 1.0 / np.sqrt(d)
            return np.random.default_rng(self.seed).uniform(-a, a, size=(d, n))
        raise InvalidArgumentError(f"unknown init kind {self.kind!r}")


def logits(head: ClassifierHead, features) -> np.ndarray:
    """Return ``W^T f (+ b)`` for one feature vector or a batch of rows."""
    f = np.asarray(features, dtype=np.float64)
    if f.shape[-1] != head.feature_dim or f.ndim not in (1, 2):
        raise InvalidArgumentError(
            f"features of shape {f.shape} do not match feature dim {head.feature_dim}")
    out = f @ head.weights
    if head.bias is not None:
        out = out + head.bias
    return out


def new_head(feature_dim: int, num_classes: int, init: InitSpec, bias: bool = False) -> ClassifierHead:
    """Head for the first step: every column is new."""
    if num_classes < 1:
        raise InvalidArgumentError("num_classes must be >= 1")
    return ClassifierHead(
        weights=init.sample(feature_dim, num_classes),
        old_count=0,
        new_count=num_classes,
        bias=np.zeros(num_classes) if bias else None,
    )


def expand_head(head: ClassifierHead, added_classes: int, init: InitSpec) -> ClassifierHead:
    """Append ``added_classes`` columns; all existing columns become old."""
    if added_classes < 1:
        raise InvalidArgumentError(f"added_classes must be >= 1, got {added_classes}")
    fresh = init.sample(head.feature_dim, added_classes)
    weights = np.concatenate([head.weights.copy(), fresh], axis=1)
    bias = None
    if head.bias is not None:
        bias = np.concatenate([head.bias.copy(), np.zeros(added_classes)])
    return ClassifierHead(weights=weights, old_count=head.num_classes,
                          new_count=added_classes, bias=bias)


def split_weights(head: ClassifierHead):
    """Return ``(W_old, W_new)``; ``W_old`` has zero columns at the first step."""
    k = head.old_count
    return head.weights[:, :k], head.weights[:, k:]


class MLPExtractor:
    """Fully connected ReLU network mapping inputs to ``feature_dim`` features.

    With ``nonnegative=True`` the last layer is rectified as well, so every
    feature is >= 0.
    """

    def __init__(self, input_dim: int, hidden_dims: Sequence[int], feature_dim: int,
                 nonnegative: bool = True, seed: int = 0):
        self.input_dim = int(input_dim)
        self.hidden_dims = tuple(int(h) for h in hidden_dims)
        self.feature_dim = int(feature_dim)
        self.nonnegative = bool(nonnegative)
        rng = np.random.default_rng(seed)
        dims = (self.input_dim, *self.hidden_dims, self.feature_dim)
        self.params = {}
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            # He-uniform for ReLU layers
            a = np.sqrt(6.0 / fan_in)
            self.params[f"W{i}"] = rng.uniform(-a, a, size=(fan_in, fan_out))
            self.params[f"b{i}"] = np.zeros(fan_out)

    @property
    def num_layers(self) -> int:
        return len(self.hidden_dims) + 1

    def _rectify(self, i: int) -> bool:
        return i < self.num_layers - 1 or self.nonnegative

    def forward(self, x, return_cache: bool = False):
        h = np.asarray(x, dtype=np.float64)
        if h.shape[-1] != self.input_dim:
            raise InvalidArgumentError(f"input dim {h.shape[-1]} != {self.input_dim}")
        cache = []
        for i in range(self.num_layers):
            cache.append(h)
            h = h @ self.params[f"W{i}"] + self.params[f"b{i}"]
            if self._rectify(i):
                h = np.maximum(h, 0.0)
        cache.append(h)
        return (h, cache) if return_cache else h

    def backward(self, cache, grad_out: np.ndarray) -> dict:
        grads = {}
        g = grad_out
        for i in reversed(range(self.num_layers)):
            if self._rectify(i):
                g = g * (cache[i + 1] > 0)
            grads[f"W{i}"] = cache[i].T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            if i > 0:
                g = g @ self.params[f"W{i}"].T
        return grads

    def copy(self) -> "MLPExtractor":
        return copy.deepcopy(self)


@dataclass
class Model:
    """Extractor plus head; ``weight_norm`` routes the head through a weight-normalization layer."""

    extractor: MLPExtractor
    head: ClassifierHead
    weight_norm: bool = False

    def effective_head(self) -> ClassifierHead:
        if not self.weight_norm:
            return self.head
        from .aligning import weight_normalization_hook
        return self.head.replace(weights=weight_normalization_hook(self.head.weights))

    def features(self, x) -> np.ndarray:
        return self.extractor.forward(x)

    def logits(self, x) -> np.ndarray:
        return logits(self.effective_head(), self.extractor.forward(x))

    def copy(self) -> "Model":
        return Model(self.extractor.copy(), self.head, self.weight_norm)


def save_checkpoint(path, model: Model, seed: int) -> None:
    """Write ``model`` to an ``.npz`` container.

    Keys: ``head/weights``, ``head/bias`` (only when present),
    ``head/old_count``, ``head/new_count``, ``extractor/<param>``,
    ``extractor/config`` (input_dim, feature_dim, nonnegative, *hidden_dims),
    ``weight_norm`` and ``seed``. Arrays are stored as float64, so loading is bit-exact.
    """
    ex = model.extractor
    arrays = {
        "head/weights": model.head.weights,
        "head/old_count": np.int64(model.head.old_count),
        "head/new_count": np.int64(model.head.new_count),
        "extractor/config": np.array([ex.input_dim, ex.feature_dim, int(ex.nonnegative),
                                      *ex.hidden_dims], dtype=np.int64),
        "weight_norm": np.int64(model.weight_norm),
        "seed": np.int64(seed),
    }
    if model.head.bias is not None:
        arrays["head/bias"] = model.head.bias
    for name, value in ex.params.items():
        arrays[f"extractor/{name}"] = value
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, seed)``."""
    with np.load(path) as data:
        cfg = data["extractor/config"]
        ex = MLPExtractor(int(cfg[0]), [int(h) for h in cfg[3:]], int(cfg[1]),
                          nonnegative=bool(cfg[2]))
        ex.params = {k.split("/", 1)[1]: data[k].copy() for k in data.files
                     if k.startswith("extractor/") and k != "extractor/config"}
        head = ClassifierHead(
            weights=data["head/weights"].copy(),
            old_count=int(data["head/old_count"]),
            new_count=int(data["head/new_count"]),
            bias=data["head/bias"].copy() if "head/bias" in data.files else None,
        )
        seed = int(data["seed"])
        weight_norm = bool(data["weight_norm"])
    return Model(ex, head, weight_norm), seed


@dataclass(frozen=True)
class TaskSchedule:
    """Ordered partition of class labels into incremental batches."""

    batches: tuple

    def __post_init__(self):
        batches = tuple(tuple(int(c) for c in b) for b in self.batches)
        if not batches or any(len(b) == 0 for b in batches):
            raise InvalidArgumentError("every batch needs at least one class")
        flat = [c for b in batches for c in b]
        if len(set(flat)) != len(flat):
            raise InvalidArgumentError("class batches must be pairwise disjoint")
        object.__setattr__(self, "batches", batches)

    @classmethod
    def from_order(cls, order: Sequence[int], step_sizes: Sequence[int]) -> "TaskSchedule":
        if sum(step_sizes) != len(order):
            raise InvalidArgumentError(
                f"step sizes sum to {sum(step_sizes)} but the order has {len(order)} classes")
        batches, start = [], 0
        for size in step_sizes:
            batches.append(tuple(order[start:start + size]))
            start += size
        return cls(tuple(batches))

    @property
    def step_sizes(self) -> list:
        return [len(b) for b in self.batches]

    @property
    def total_steps(self) -> int:
        return len(self.batches)

    @property
    def order(self) -> list:
        return [c for b in self.batches for c in b]

    @property
    def universe(self) -> frozenset:
        return frozenset(self.order)

    def old_count(self, step: int) -> int:
        """Number of classes learned before ``step`` (1-based)."""
        self._check_step(step)
        return sum(self.step_sizes[:step - 1])

    def seen(self, step: int) -> list:
        self._check_step(step)
        return [c for b in self.batches[:step] for c in b]

    def batch(self, step: int) -> tuple:
        self._check_step(step)
        return self.batches[step - 1]

    def column_of(self) -> dict:
        """Map each class label to its head column (position in the order)."""
        return {c: i for i, c in enumerate(self.order)}

    def _check_step(self, step: int):
        if not 1 <= step <= self.total_steps:
            raise ProtocolError(f"step {step} outside 1..{self.total_steps}")
