"""Two-phase incremental training: distill-and-train, then correct the head.

One call to :func:`run_step` performs, in order: teacher snapshot, head
expansion, rehearsal pool construction, SGD training on the combined loss
(clipping the head after every update when requested), weight aligning or
unit-norm post-processing, exemplar memory update and evaluation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .aligning import (NormKind, align_weights, clip_weights_nonnegative, corrected_logits,
                       unit_norm_postprocess, weight_normalization_backward,
                       weight_normalization_hook, weight_norms)
from .data import Dataset, augment_images
from .errors import ConfigError, DegenerateWeightsError, ProtocolError
from .losses import LossConfig, combined_loss_and_grad
from .memory import ExemplarMemory, training_pool
from .metrics import StepMetrics, Summary, evaluate, summarize
from .model import (InitSpec, MLPExtractor, Model, TaskSchedule, expand_head,
                    logits as head_logits, new_head)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VariationSpec:
    use_kd: bool = True
    use_wa: bool = True
    use_wnl: bool = False
    use_unit_norm_post: bool = False
    restrict_nonnegative: bool = True
    bias_enabled: bool = False
    norm_kind: str = NormKind.TWO_NORM.value
    # distill from the corrected ("post_wa") or the raw ("pre_wa") previous model
    teacher: str = "post_wa"

    def __post_init__(self):
        if self.use_wnl and self.use_wa:
            raise ConfigError("variation.use_wnl", "weight normalization layer and weight aligning are exclusive")
        if self.teacher not in ("post_wa", "pre_wa"):
            raise ConfigError("variation.teacher", f"expected 'post_wa' or 'pre_wa', got {self.teacher!r}")
        NormKind(self.norm_kind)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    # None: decay at 60% and 80% of the epochs
    milestones: Optional[tuple] = None
    lr_decay: float = 0.1
    temperature: float = 2.0
    lambda_override: Optional[float] = None
    augment: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("train.epochs", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if self.milestones is not None:
            object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
            if any(not 0 < m < self.epochs for m in self.milestones):
                raise ConfigError("train.milestones", f"every milestone must lie in 1..{self.epochs - 1}")
        LossConfig(self.temperature, self.lambda_override)

    @property
    def effective_milestones(self) -> tuple:
        if self.milestones is not None:
            return self.milestones
        return tuple(m for m in (int(0.6 * self.epochs), int(0.8 * self.epochs)) if 0 < m < self.epochs)

    def lr_at(self, epoch: int) -> float:
        passed = sum(1 for m in self.effective_milestones if epoch >= m)
        return self.lr * self.lr_decay ** passed


# Named training schedules. "desk" is the laptop-scale default.
TRAIN_PRESETS = {
    "desk": TrainConfig(),
    "cifar": TrainConfig(epochs=250, batch_size=32, milestones=(100, 150, 200)),
    "imagenet": TrainConfig(epochs=100, batch_size=256, milestones=(30, 60, 80, 90)),
}


@dataclass(frozen=True)
class ModelConfig:
    hidden_dims: tuple = (64,)
    feature_dim: int = 32
    nonnegative_features: bool = True
    init: str = "uniform"
    init_scale: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.feature_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("model", "layer widths must be positive")
        if self.init not in ("uniform", "zero"):
            raise ConfigError("model.init", f"expected 'uniform' or 'zero', got {self.init!r}")


@dataclass(frozen=True)
class TeacherSnapshot:
    model: Model
    old_count: int

    def logits(self, x) -> np.ndarray:
        return self.model.logits(x)


def snapshot_teacher(model: Model) -> TeacherSnapshot:
    """Deep copy of ``model`` with every parameter array made read-only."""
    m = model.copy()
    for v in m.extractor.params.values():
        v.setflags(write=False)
    w = m.head.weights.copy()
    w.setflags(write=False)
    b = None
    if m.head.bias is not None:
        b = m.head.bias.copy()
        b.setflags(write=False)
    m.head = m.head.replace(weights=w, bias=b)
    return TeacherSnapshot(m, m.head.num_classes)


@dataclass
class RunState:
    step: int = 0
    model: Optional[Model] = None
    # the previous step's model before any head correction
    raw_model: Optional[Model] = None
    memory: Optional[ExemplarMemory] = None


@dataclass
class StepResult:
    state: RunState
    metrics: StepMetrics
    # max |rescaled-weights logits - rescaled-logits| on a test batch, when WA ran
    wa_equivalence_gap: Optional[float] = None


class SGD:
    """Momentum SGD with L2 weight decay, torch-style update order."""

    def __init__(self, momentum: float, weight_decay: float):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, params: dict, grads: dict, lr: float) -> dict:
        out = {}
        for k, p in params.items():
            d = grads[k] + self.weight_decay * p
            v = self.velocity.get(k)
            v = d if v is None else self.momentum * v + d
            self.velocity[k] = v
            out[k] = p - lr * v
        return out


def class_columns(schedule: TaskSchedule, num_labels: int) -> np.ndarray:
    """Lookup array: dataset label -> head column (-1 for unscheduled labels)."""
    cols = np.full(num_labels, -1, dtype=np.int64)
    for c, i in schedule.column_of().items():
        if c >= num_labels:
            raise ConfigError("schedule", f"class {c} exceeds the dataset's {num_labels} labels")
        cols[c] = i
    return cols


def step_sample_ids(labels: np.ndarray, classes) -> np.ndarray:
    return np.flatnonzero(np.isin(labels, list(classes)))


def _train(model: Model, teacher: Optional[TeacherSnapshot], x: np.ndarray, y_cols: np.ndarray,
           pool: np.ndarray, old_count: int, new_count: int, variation: VariationSpec,
           train: TrainConfig, dataset: Dataset, rng_key) -> Model:
    loss_cfg = LossConfig(train.temperature, train.lambda_override)
    kd_old = old_count if (variation.use_kd and teacher is not None) else 0
    opt = SGD(train.momentum, train.weight_decay)
    ex = model.extractor
    head = model.head
    augment = train.augment and dataset.image_shape is not None
    for epoch in range(train.epochs):
        rng = np.random.default_rng([*rng_key, epoch])
        order = pool[rng.permutation(pool.size)]
        lr = train.lr_at(epoch)
        for start in range(0, order.size, train.batch_size):
            ids = order[start:start + train.batch_size]
            xb = x[ids]
            if augment:
                xb = augment_images(xb, dataset.image_shape, rng)
            yb = y_cols[ids]
            feats, cache = ex.forward(xb, return_cache=True)
            w_eff = weight_normalization_hook(head.weights) if variation.use_wnl else head.weights
            out = feats @ w_eff
            if head.bias is not None:
                out = out + head.bias
            t_logits = teacher.logits(xb) if kd_old else None
            _, g = combined_loss_and_grad(out, yb, t_logits, loss_cfg, kd_old, new_count)
            g_w = feats.T @ g
            if variation.use_wnl:
                g_w = weight_normalization_backward(head.weights, g_w)
            grads = ex.backward(cache, g @ w_eff.T)
            params = dict(ex.params)
            params["head/W"] = head.weights
            grads["head/W"] = g_w
            if head.bias is not None:
                params["head/b"] = head.bias
                grads["head/b"] = g.sum(axis=0)
            new = opt.step(params, grads, lr)
            head = head.replace(weights=new.pop("head/W"), bias=new.pop("head/b", None))
            ex.params = new
            if variation.restrict_nonnegative:
                head = clip_weights_nonnegative(head)
    return Model(ex, head, variation.use_wnl)


def run_step(state: RunState, dataset: Dataset, schedule: TaskSchedule, new_ids: np.ndarray,
             variation: VariationSpec, train: TrainConfig, model_config: ModelConfig,
             seed: int) -> StepResult:
    """Run the next incremental step and evaluate on every seen class."""
    step = state.step + 1
    batch = schedule.batch(step)
    new_ids = np.asarray(new_ids, dtype=np.int64)
    got = set(np.unique(dataset.y_train[new_ids]).tolist())
    if got != set(batch):
        raise ProtocolError(f"step {step}: data has classes {sorted(got)}, schedule expects {sorted(batch)}")
    t0 = time.perf_counter()
    old_count = schedule.old_count(step)
    new_count = len(batch)
    cols = class_columns(schedule, dataset.num_classes)
    init = InitSpec(model_config.init, model_config.init_scale, seed=seed * 1009 + step)

    # (1) teacher, (2) head expansion
    teacher = None
    if step == 1:
        ex = MLPExtractor(dataset.input_dim, model_config.hidden_dims, model_config.feature_dim,
                          model_config.nonnegative_features, seed=seed)
        model = Model(ex, new_head(ex.feature_dim, new_count, init, variation.bias_enabled),
                      variation.use_wnl)
        memory = state.memory
    else:
        source = state.model if variation.teacher == "post_wa" else state.raw_model
        teacher = snapshot_teacher(source)
        model = Model(state.model.extractor.copy(), expand_head(state.model.head, new_count, init),
                      variation.use_wnl)
        memory = state.memory

    # (3) rehearsal pool, (4) training
    pool = training_pool(memory, new_ids) if memory is not None else new_ids
    model = _train(model, teacher, dataset.x_train, cols[dataset.y_train], pool, old_count,
                   new_count, variation, train, dataset, (seed, step))

    # (5) correction
    kind = NormKind(variation.norm_kind)
    try:
        norms = weight_norms(model.effective_head(), kind)
    except DegenerateWeightsError as e:
        raise DegenerateWeightsError(f"step {step}: {e}") from e
    raw_model = model.copy()
    gamma_applied = None
    if variation.use_wa and step > 1:
        try:
            model.head = align_weights(model.head, kind)
        except DegenerateWeightsError as e:
            raise DegenerateWeightsError(f"step {step}: {e}") from e
        gamma_applied = norms.gamma
    if variation.use_unit_norm_post:
        model.head = unit_norm_postprocess(model.head, kind)

    # (6) memory
    if memory is not None:
        by_class = {c: new_ids[dataset.y_train[new_ids] == c] for c in batch}
        memory = memory.rebalance(by_class, lambda ids: model.features(dataset.x_train[ids]))

    # (7) evaluation on every seen class
    test_ids = step_sample_ids(dataset.y_test, schedule.seen(step))
    feats = model.features(dataset.x_test[test_ids])
    out = head_logits(model.effective_head(), feats)
    gap = None
    if gamma_applied is not None and not variation.use_unit_norm_post:
        raw = head_logits(raw_model.head, feats[:64])
        rescaled = corrected_logits(raw[:, :old_count], raw[:, old_count:], gamma_applied)
        gap = float(np.max(np.abs(rescaled - out[:64])))
    metrics = evaluate(out, cols[dataset.y_test[test_ids]], old_count, step, norms,
                       gamma_applied=gamma_applied, class_order=schedule.seen(step))
    metrics.wallclock = time.perf_counter() - t0
    log.info("step %d: top1=%.4f gamma=%s", step, metrics.top1, norms.gamma)
    return StepResult(RunState(step, model, raw_model, memory), metrics, gap)


@dataclass
class ExperimentResult:
    steps: List[StepMetrics]
    summary: Summary
    state: RunState
    wa_gaps: List[Optional[float]] = field(default_factory=list)


def run_experiment(dataset: Dataset, schedule: TaskSchedule, variation: VariationSpec,
                   train: TrainConfig, model_config: ModelConfig = ModelConfig(),
                   memory_budget: Optional[int] = 2000, memory_strategy: str = "herding",
                   seed: int = 0, upper_bound: bool = False,
                   on_step: Optional[Callable[[StepResult], None]] = None) -> ExperimentResult:
    """Run every step of ``schedule``.

    With ``upper_bound`` the schedule is collapsed into a single joint step
    over all of its classes and the resulting accuracy is recorded as the
    summary's ceiling. ``memory_budget=None`` disables rehearsal.
    """
    if upper_bound:
        schedule = TaskSchedule((tuple(schedule.order),))
    missing = set(schedule.order) - set(np.unique(dataset.y_train).tolist())
    if missing:
        raise ProtocolError(f"schedule classes {sorted(missing)} have no training data")
    memory = ExemplarMemory(memory_budget, memory_strategy, seed) if memory_budget is not None else None
    state = RunState(memory=memory)
    steps, gaps = [], []
    for b in range(1, schedule.total_steps + 1):
        ids = step_sample_ids(dataset.y_train, schedule.batch(b))
        result = run_step(state, dataset, schedule, ids, variation, train, model_config, seed)
        state = result.state
        steps.append(result.metrics)
        gaps.append(result.wa_equivalence_gap)
        if on_step is not None:
            on_step(result)
    summary = summarize(steps, upper_bound=steps[-1].top1 if upper_bound else None)
    return ExperimentResult(steps, summary, state, gaps)
