"""Weight aligning of the classifier head and related head post-processing.

After a step is trained the new-class columns of ``W`` tend to have much
larger norms than the old-class columns. Weight aligning multiplies the new
columns by ``gamma = mean(old norms) / mean(new norms)``, which is the same
as multiplying the new-class logits by ``gamma``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .errors import DegenerateWeightsError, InvalidArgumentError, InvalidStateError
from .model import ClassifierHead, split_weights


class NormKind(str, enum.Enum):
    ONE_NORM = "one_norm"
    TWO_NORM = "two_norm"


def column_norms(weights: np.ndarray, kind: NormKind = NormKind.TWO_NORM) -> np.ndarray:
    kind = NormKind(kind)
    w = np.asarray(weights, dtype=np.float64)
    if kind is NormKind.ONE_NORM:
        return np.abs(w).sum(axis=0)
    return np.sqrt((w * w).sum(axis=0))


@dataclass(frozen=True)
class NormReport:
    old_norms: tuple
    new_norms: tuple
    mean_old: Optional[float]  # None at the first step
    mean_new: float
    gamma: Optional[float]  # None when there are no old classes
    kind: str = NormKind.TWO_NORM.value

    def to_dict(self) -> dict:
        d = asdict(self)
        d["old_norms"] = list(self.old_norms)
        d["new_norms"] = list(self.new_norms)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NormReport":
        return cls(old_norms=tuple(d["old_norms"]), new_norms=tuple(d["new_norms"]),
                   mean_old=d["mean_old"], mean_new=d["mean_new"], gamma=d["gamma"],
                   kind=d.get("kind", NormKind.TWO_NORM.value))


def weight_norms(head: ClassifierHead, kind: NormKind = NormKind.TWO_NORM) -> NormReport:
    """Per-column norms of the old and new groups, their means and ``gamma``."""
    kind = NormKind(kind)
    w_old, w_new = split_weights(head)
    old = column_norms(w_old, kind)
    new = column_norms(w_new, kind)
    mean_new = float(new.mean())
    if mean_new == 0.0:
        raise DegenerateWeightsError("mean norm of new-class weights is zero; gamma is undefined")
    mean_old = float(old.mean()) if old.size else None
    gamma = mean_old / mean_new if mean_old is not None else None
    return NormReport(tuple(float(v) for v in old), tuple(float(v) for v in new),
                      mean_old, mean_new, gamma, kind.value)


def align_weights(head: ClassifierHead, kind: NormKind = NormKind.TWO_NORM) -> ClassifierHead:
    """Rescale the new-class columns (and new-class bias) by ``gamma``.

    Old columns are returned untouched, so old-class logits do not change.
    """
    if head.old_count == 0:
        raise InvalidStateError("weight aligning needs at least one old class")
    gamma = weight_norms(head, kind).gamma
    k = head.old_count
    weights = head.weights.copy()
    weights[:, k:] = gamma * weights[:, k:]
    bias = None
    if head.bias is not None:
        bias = head.bias.copy()
        bias[k:] = gamma * bias[k:]
    return head.replace(weights=weights, bias=bias)


def corrected_logits(o_old, o_new, gamma: float) -> np.ndarray:
    """Concatenate old logits with new logits scaled by ``gamma`` (last axis)."""
    if not gamma > 0:
        raise InvalidArgumentError(f"gamma must be > 0, got {gamma}")
    return np.concatenate([np.asarray(o_old, dtype=np.float64),
                           gamma * np.asarray(o_new, dtype=np.float64)], axis=-1)


def clip_weights_nonnegative(head: ClassifierHead) -> ClassifierHead:
    """Project every weight onto ``[0, inf)``; the bias is left alone."""
    return head.replace(weights=np.maximum(head.weights, 0.0))


def unit_norm_postprocess(head: ClassifierHead, kind: NormKind = NormKind.TWO_NORM) -> ClassifierHead:
    norms = column_norms(head.weights, kind)
    if np.any(norms == 0):
        raise DegenerateWeightsError(f"columns {np.flatnonzero(norms == 0).tolist()} have zero norm")
    return head.replace(weights=head.weights / norms)


def weight_normalization_hook(weights: np.ndarray) -> np.ndarray:
    """Effective forward-pass weights of a weight-normalization layer: unit 2-norm columns."""
    norms = column_norms(weights, NormKind.TWO_NORM)
    if np.any(norms == 0):
        raise DegenerateWeightsError(f"columns {np.flatnonzero(norms == 0).tolist()} have zero norm")
    return weights / norms


def weight_normalization_backward(weights: np.ndarray, grad_effective: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the normalized weights back to the raw weights.

    For a column ``w`` with ``u = w / |w|``: ``dL/dw = (g - u (u . g)) / |w|``.
    """
    norms = column_norms(weights, NormKind.TWO_NORM)
    u = weights / norms
    return (grad_effective - u * (u * grad_effective).sum(axis=0)) / norms
