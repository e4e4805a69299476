"""Accuracy, error decomposition, confusion matrices and run summaries."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from .aligning import NormReport
from .errors import InvalidArgumentError

CSV_COLUMNS = ("step", "seen_classes", "top1", "top5", "e_n", "e_o", "e_on", "e_oo",
               "gamma", "mean_norm_old", "mean_norm_new")


def topk_predictions(logits, k: int) -> np.ndarray:
    """Indices of the ``k`` largest logits per row; ties go to the lower class index."""
    s = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if not 1 <= k <= s.shape[1]:
        raise InvalidArgumentError(f"k={k} outside 1..{s.shape[1]}")
    # stable sort on -s keeps lower indices first among equal logits
    return np.argsort(-s, axis=1, kind="stable")[:, :k]


def topk_accuracy(logits, labels, k: int) -> float:
    labels = np.asarray(labels)
    top = topk_predictions(logits, k)
    return float((top == labels[:, None]).any(axis=1).mean())


def error_decomposition(predictions, labels, old_classes) -> dict:
    """Count errors on new samples (``e_n``) and old samples (``e_o``).

    Old-sample errors split into predictions of a new class (``e_on``) and
    of a different old class (``e_oo``).
    """
    pred = np.asarray(predictions)
    y = np.asarray(labels)
    old = np.isin(y, list(old_classes))
    wrong = pred != y
    pred_old = np.isin(pred, list(old_classes))
    e_on = int((old & wrong & ~pred_old).sum())
    e_oo = int((old & wrong & pred_old).sum())
    return {"e_n": int((~old & wrong).sum()), "e_o": e_on + e_oo, "e_on": e_on, "e_oo": e_oo}


def confusion_matrix(predictions, labels, num_classes: int) -> np.ndarray:
    """``M[i, j]`` counts samples of true class ``i`` predicted as ``j``."""
    pred = np.asarray(predictions, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if pred.size and (pred.min() < 0 or pred.max() >= num_classes or y.min() < 0 or y.max() >= num_classes):
        raise InvalidArgumentError(f"labels/predictions outside 0..{num_classes - 1}")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (y, pred), 1)
    return m


@dataclass
class StepMetrics:
    """Evaluation of one incremental step on the test data of all seen classes.

    Labels here are head columns (class position in the schedule order).
    ``norms`` is captured before any post-training correction.
    """

    step: int
    seen_classes: int
    old_classes: int
    top1: float
    top5: float
    errors: dict
    confusion: np.ndarray
    norms: NormReport
    gamma_applied: Optional[float] = None
    wallclock: float = 0.0
    class_order: List[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "seen_classes": self.seen_classes,
            "old_classes": self.old_classes,
            "top1": self.top1,
            "top5": self.top5,
            "errors": dict(self.errors),
            "confusion": self.confusion.tolist(),
            "norms": self.norms.to_dict(),
            "gamma_applied": self.gamma_applied,
            "wallclock": self.wallclock,
            "class_order": list(self.class_order),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepMetrics":
        return cls(step=d["step"], seen_classes=d["seen_classes"], old_classes=d["old_classes"],
                   top1=d["top1"], top5=d["top5"], errors=dict(d["errors"]),
                   confusion=np.asarray(d["confusion"], dtype=np.int64),
                   norms=NormReport.from_dict(d["norms"]), gamma_applied=d.get("gamma_applied"),
                   wallclock=d.get("wallclock", 0.0), class_order=list(d.get("class_order", [])))

    def csv_row(self) -> dict:
        return {
            "step": self.step,
            "seen_classes": self.seen_classes,
            "top1": self.top1,
            "top5": self.top5,
            **{k: self.errors[k] for k in ("e_n", "e_o", "e_on", "e_oo")},
            "gamma": self.norms.gamma,
            "mean_norm_old": self.norms.mean_old,
            "mean_norm_new": self.norms.mean_new,
        }


def evaluate(logits, labels, old_count: int, step: int, norms: NormReport, **extra) -> StepMetrics:
    """Build :class:`StepMetrics` from test logits whose labels are head columns."""
    s = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    c = s.shape[1]
    pred = topk_predictions(s, 1)[:, 0]
    return StepMetrics(
        step=step,
        seen_classes=c,
        old_classes=old_count,
        top1=topk_accuracy(s, y, 1),
        top5=topk_accuracy(s, y, min(5, c)),
        errors=error_decomposition(pred, y, range(old_count)),
        confusion=confusion_matrix(pred, y, c),
        norms=norms,
        **extra,
    )


def write_metrics_json(metrics: StepMetrics, path) -> None:
    """Persist one step record. Wall-clock time is left out so reruns are byte-identical."""
    d = metrics.to_dict()
    d.pop("wallclock")
    Path(path).write_text(json.dumps(d, indent=1))


def read_metrics_json(path) -> StepMetrics:
    return StepMetrics.from_dict(json.loads(Path(path).read_text()))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(steps) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for m in steps:
        row = m.csv_row()
        w.writerow([_fmt(row[k]) for k in CSV_COLUMNS])
    return buf.getvalue()


@dataclass
class Summary:
    """Per-step top-1 accuracies plus the last value and the mean over steps 2..B."""

    accuracies: List[float]
    top5: List[float] = field(default_factory=list)
    upper_bound: Optional[float] = None

    @property
    def last(self) -> float:
        return self.accuracies[-1]

    @property
    def incremental_average(self) -> Optional[float]:
        rest = self.accuracies[1:]
        return math.fsum(rest) / len(rest) if rest else None

    def to_dict(self) -> dict:
        return {"accuracies": list(self.accuracies), "top5": list(self.top5),
                "last": self.last, "incremental_average": self.incremental_average,
                "upper_bound": self.upper_bound}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        steps = [f"step{i}" for i in range(1, len(self.accuracies) + 1)]
        w.writerow(["metric", *steps, "last", "average", "upper_bound"])
        w.writerow(["top1", *map(repr, self.accuracies), repr(self.last),
                    _fmt(self.incremental_average), _fmt(self.upper_bound)])
        if self.top5:
            avg5 = math.fsum(self.top5[1:]) / (len(self.top5) - 1) if len(self.top5) > 1 else None
            w.writerow(["top5", *map(repr, self.top5), repr(self.top5[-1]), _fmt(avg5), ""])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Summary":
        rows = {r[0]: r[1:] for r in csv.reader(io.StringIO(text)) if r}
        n = len(rows["metric"]) - 3
        top1 = rows["top1"]
        ub = top1[n + 2]
        top5 = [float(v) for v in rows["top5"][:n]] if "top5" in rows else []
        return cls([float(v) for v in top1[:n]], top5, float(ub) if ub else None)

    def render(self) -> str:
        """Human-readable table, percentages with one decimal."""
        head = [f"step {i}" for i in range(1, len(self.accuracies) + 1)] + ["last", "average"]
        vals = [*self.accuracies, self.last, self.incremental_average]
        cells = ["--" if v is None else f"{100 * v:.1f}" for v in vals]
        width = max(len(h) for h in head) + 2
        lines = ["".join(h.rjust(width) for h in head), "".join(c.rjust(width) for c in cells)]
        if self.upper_bound is not None:
            lines.append(f"upper bound: {100 * self.upper_bound:.1f}")
        return "\n".join(lines)


def summarize(steps, upper_bound: Optional[float] = None) -> Summary:
    steps = list(steps)
    if not steps:
        raise InvalidArgumentError("summarize needs at least one step")
    return Summary([m.top1 for m in steps], [m.top5 for m in steps], upper_bound)


def mean_std(values) -> tuple:
    """Mean and sample standard deviation (ddof=1; 0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
