"""Fixed-budget exemplar memory for rehearsal.

Exemplars are stored as sample identifiers (row indices into the training
set), so a memory manifest is enough to rebuild the rehearsal pool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List

import numpy as np

from .errors import ConfigError, InvalidArgumentError

STRATEGIES = ("herding", "random")


def herding_select(features, m: int) -> List[int]:
    """Greedy herding: pick samples whose running mean tracks the class mean.

    At each step the unchosen index that brings the mean of the selected
    features closest (2-norm) to the class-mean feature is appended. Ties go
    to the lowest index. The result is in selection order, so any prefix is
    itself the herding selection of that size.
    """
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] == 0:
        raise InvalidArgumentError("herding needs a non-empty (n, d) feature array")
    n = f.shape[0]
    if not 0 <= m <= n:
        raise InvalidArgumentError(f"cannot select {m} of {n} samples")
    mu = f.mean(axis=0)
    chosen = np.zeros(n, dtype=bool)
    running = np.zeros(f.shape[1])
    order = []
    for k in range(m):
        dist = np.linalg.norm((running + f) / (k + 1) - mu, axis=1)
        dist[chosen] = np.inf
        i = int(np.argmin(dist))
        order.append(i)
        chosen[i] = True
        running = running + f[i]
    return order


def random_select(n: int, m: int, seed: int) -> List[int]:
    """``m`` distinct indices from ``range(n)``, uniformly, fixed by ``seed``."""
    if not 0 <= m <= n:
        raise InvalidArgumentError(f"cannot select {m} of {n} samples")
    return [int(i) for i in np.random.default_rng(seed).choice(n, size=m, replace=False)]


def class_quotas(budget: int, labels) -> Dict[int, int]:
    """Split ``budget`` evenly; the remainder goes one each to the lowest labels."""
    labels = sorted(labels)
    if not labels:
        return {}
    q, r = divmod(budget, len(labels))
    if q == 0:
        raise ConfigError("memory.budget",
                          f"budget {budget} leaves no exemplar slot for {len(labels)} classes")
    return {c: q + (1 if i < r else 0) for i, c in enumerate(labels)}


@dataclass
class ExemplarMemory:
    budget: int
    strategy: str = "herding"
    seed: int = 0
    per_class: Dict[int, List[int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError("memory.strategy", f"expected one of {STRATEGIES}, got {self.strategy!r}")
        if self.budget < 0:
            raise ConfigError("memory.budget", "must be >= 0")

    def __len__(self):
        return sum(len(v) for v in self.per_class.values())

    @property
    def classes(self) -> list:
        return sorted(self.per_class)

    def counts(self) -> Dict[int, int]:
        return {c: len(v) for c, v in sorted(self.per_class.items())}

    def sample_ids(self) -> np.ndarray:
        ids = [i for c in self.classes for i in self.per_class[c]]
        return np.asarray(ids, dtype=np.int64)

    def rebalance(self, new_classes: Dict[int, np.ndarray],
                  feature_fn: Callable[[np.ndarray], np.ndarray]) -> "ExemplarMemory":
        """Shrink old lists to the new quota and fill the new classes.

        ``new_classes`` maps each new label to the sample ids available for
        it; ``feature_fn`` maps sample ids to extractor features (used by
        herding only). Returns a new memory; ``self`` is not modified.
        """
        overlap = set(new_classes) & set(self.per_class)
        if overlap:
            raise InvalidArgumentError(f"classes {sorted(overlap)} are already in memory")
        quotas = class_quotas(self.budget, list(self.per_class) + list(new_classes))
        # herding lists are prefix-consistent, so truncating keeps a valid selection
        per_class = {c: list(ids[:quotas[c]]) for c, ids in self.per_class.items()}
        for c in sorted(new_classes):
            ids = np.asarray(new_classes[c], dtype=np.int64)
            if ids.size == 0:
                raise InvalidArgumentError(f"class {c} has no samples")
            m = min(quotas[c], ids.size)
            if self.strategy == "herding":
                picks = herding_select(feature_fn(ids), m)
            else:
                picks = random_select(ids.size, m, seed=self.seed * 1_000_003 + c)
            per_class[c] = [int(ids[i]) for i in picks]
        return ExemplarMemory(self.budget, self.strategy, self.seed, per_class)

    def to_manifest(self) -> dict:
        return {
            "budget": self.budget,
            "strategy": self.strategy,
            "seed": self.seed,
            "per_class": {str(c): self.per_class[c] for c in self.classes},
        }

    @classmethod
    def from_manifest(cls, d: dict) -> "ExemplarMemory":
        return cls(int(d["budget"]), d["strategy"], int(d.get("seed", 0)),
                   {int(c): [int(i) for i in ids] for c, ids in d["per_class"].items()})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_manifest(), indent=1))

    @classmethod
    def load(cls, path) -> "ExemplarMemory":
        return cls.from_manifest(json.loads(Path(path).read_text()))


def training_pool(memory: ExemplarMemory, new_ids) -> np.ndarray:
    """Sample ids of the stored exemplars followed by the new step's samples."""
    return np.concatenate([memory.sample_ids(), np.asarray(new_ids, dtype=np.int64)])
