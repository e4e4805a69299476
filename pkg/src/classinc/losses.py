"""Cross-entropy, old-class distillation and their balanced combination.

Every loss accepts a single logit vector or a batch of rows. Batches are
reduced by the mean. The ``*_grad`` functions return the gradient of the
(mean-reduced) loss with respect to the student logits.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 2.0
    # None means lambda = C_old / (C_old + C_new)
    lambda_override: Optional[float] = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidArgumentError(f"temperature must be > 0, got {self.temperature}")
        if self.lambda_override is not None and not 0.0 <= self.lambda_override <= 1.0:
            raise InvalidArgumentError(f"lambda_override must lie in [0, 1], got {self.lambda_override}")


def _check_finite(x: np.ndarray):
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("logits must be finite")


def log_softmax(logits, T: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_with_temperature(logits, T: float = 1.0) -> np.ndarray:
    """Softmax of ``logits / T`` along the last axis, max-shifted for stability."""
    x = np.asarray(logits, dtype=np.float64)
    if x.shape[-1] < 1:
        raise InvalidArgumentError("need at least one logit")
    if not T > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {T}")
    _check_finite(x)
    z = x / T
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _labels(logits: np.ndarray, label):
    y = np.atleast_1d(np.asarray(label))
    if not np.issubdtype(y.dtype, np.integer):
        raise InvalidArgumentError("labels must be integers")
    k = logits.shape[-1]
    if np.any(y < 0) or np.any(y >= k):
        raise InvalidArgumentError(f"label out of range [0, {k})")
    return y


def cross_entropy_loss(logits, label) -> float:
    """``-log p_y`` with ``p = softmax(logits)``; mean over rows for a batch."""
    s = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    _check_finite(s)
    y = _labels(s, label)
    if len(y) != s.shape[0]:
        raise InvalidArgumentError(f"{len(y)} labels for {s.shape[0]} logit rows")
    logp = log_softmax(s)
    return float(-logp[np.arange(len(y)), y].mean())


def cross_entropy_grad(logits, label) -> np.ndarray:
    s = np.asarray(logits, dtype=np.float64)
    s2 = np.atleast_2d(s)
    y = _labels(s2, label)
    g = softmax_with_temperature(s2, 1.0)
    g[np.arange(len(y)), y] -= 1.0
    g /= len(y)
    return g.reshape(s.shape)


def _kd_inputs(student_logits, teacher_logits, old_count: int, T: float):
    if old_count < 1:
        raise InvalidArgumentError("distillation needs at least one old class")
    if not T > 0:
        raise InvalidArgumentError(f"temperature must be > 0, got {T}")
    s = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    t = np.atleast_2d(np.asarray(teacher_logits, dtype=np.float64))
    if t.shape[-1] != old_count or s.shape[-1] < old_count or s.shape[0] != t.shape[0]:
        raise InvalidArgumentError(
            f"teacher logits {t.shape} / student logits {s.shape} do not fit old_count {old_count}")
    _check_finite(s)
    _check_finite(t)
    return s, t


def distillation_loss(student_logits, teacher_logits, old_count: int, T: float) -> float:
    """Soft cross-entropy between teacher and student over the old classes.

    Both distributions are softmaxes at temperature ``T`` taken over the
    first ``old_count`` logits only; student logits beyond that are ignored.
    """
    s, t = _kd_inputs(student_logits, teacher_logits, old_count, T)
    q_hat = softmax_with_temperature(t, T)
    log_q = log_softmax(s[:, :old_count], T)
    return float(-(q_hat * log_q).sum(axis=1).mean())


def distillation_grad(student_logits, teacher_logits, old_count: int, T: float) -> np.ndarray:
    s_in = np.asarray(student_logits, dtype=np.float64)
    s, t = _kd_inputs(student_logits, teacher_logits, old_count, T)
    g = np.zeros_like(s)
    q = softmax_with_temperature(s[:, :old_count], T)
    q_hat = softmax_with_temperature(t, T)
    g[:, :old_count] = (q - q_hat) / (T * s.shape[0])
    return g.reshape(s_in.shape)


def lambda_balance(old_count: int, new_count: int) -> float:
    """``C_old / (C_old + C_new)``: the KD weight grows with the share of old classes."""
    if new_count < 1 or old_count < 0:
        raise InvalidArgumentError(f"need old_count >= 0 and new_count >= 1, got {old_count}, {new_count}")
    return old_count / (old_count + new_count)


def _lambda(config: LossConfig, old_count: int, new_count: int) -> float:
    if config.lambda_override is not None:
        return config.lambda_override
    return lambda_balance(old_count, new_count)


def _check_teacher(teacher_logits, old_count: int):
    if old_count > 0 and teacher_logits is None:
        raise InvalidStateError("teacher logits are required once old classes exist")
    if old_count == 0 and teacher_logits is not None:
        raise InvalidArgumentError("teacher logits given but there are no old classes")


def combined_loss(student_logits, label, teacher_logits, config: LossConfig,
                  old_count: int, new_count: int) -> float:
    """``(1 - lam) * CE + lam * KD``; plain cross-entropy when there are no old classes."""
    _check_teacher(teacher_logits, old_count)
    ce = cross_entropy_loss(student_logits, label)
    if old_count == 0:
        return ce
    lam = _lambda(config, old_count, new_count)
    kd = distillation_loss(student_logits, teacher_logits, old_count, config.temperature)
    return (1.0 - lam) * ce + lam * kd


def combined_loss_and_grad(student_logits, label, teacher_logits, config: LossConfig,
                           old_count: int, new_count: int):
    _check_teacher(teacher_logits, old_count)
    ce = cross_entropy_loss(student_logits, label)
    g = cross_entropy_grad(student_logits, label)
    if old_count == 0:
        return ce, g
    lam = _lambda(config, old_count, new_count)
    T = config.temperature
    kd = distillation_loss(student_logits, teacher_logits, old_count, T)
    g_kd = distillation_grad(student_logits, teacher_logits, old_count, T)
    return (1.0 - lam) * ce + lam * kd, (1.0 - lam) * g + lam * g_kd
