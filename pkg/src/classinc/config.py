"""Experiment configuration: TOML schema, validation, presets.

A config file has top-level ``seed``, ``output`` and ``preset`` keys and the
tables ``[dataset]`` (with an optional ``[dataset.synthetic]``),
``[schedule]``, ``[variation]``, ``[train]``, ``[model]`` and ``[memory]``.
Unknown keys are rejected. The README lists every key with its default.
"""

from __future__ import annotations

import dataclasses
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import Dataset, SyntheticDatasetSpec, generate_synthetic, load_cifar
from .driver import ModelConfig, TRAIN_PRESETS, TrainConfig, VariationSpec
from .errors import ConfigError, InvalidArgumentError
from .memory import STRATEGIES
from .model import TaskSchedule

DATASET_CLASSES = {"cifar10": 10, "cifar100": 100}

VARIATION_PRESETS = {
    "variation1": VariationSpec(use_kd=False, use_wa=False),
    "variation2": VariationSpec(use_kd=False, use_wa=True),
    "variation3": VariationSpec(use_kd=True, use_wa=False),
    "variation4": VariationSpec(use_kd=True, use_wa=False, use_wnl=True),
    "ours": VariationSpec(use_kd=True, use_wa=True),
    # joint training on every class in one step; no incremental correction applies
    "upper_bound": VariationSpec(use_kd=False, use_wa=False),
}

PRESET_DESCRIPTIONS = {
    "variation1": "CE",
    "variation2": "CE + WA",
    "variation3": "CE + KD",
    "variation4": "CE + KD + WNL",
    "ours": "CE + KD + WA",
    "upper_bound": "joint training on all classes",
}


@dataclass(frozen=True)
class DatasetConfig:
    name: str = "synthetic"
    root: Optional[str] = None
    synthetic: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)
    # None: the synthetic generator follows the global seed
    synthetic_seed: Optional[int] = None

    @property
    def num_classes(self) -> int:
        if self.name == "synthetic":
            return self.synthetic.num_classes
        return DATASET_CLASSES[self.name]


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 5
    classes_per_step: int = 2
    order: Optional[tuple] = None
    order_seed: Optional[int] = None

    @property
    def total_classes(self) -> int:
        return self.steps * self.classes_per_step


@dataclass(frozen=True)
class MemoryConfig:
    budget: int = 20
    strategy: str = "herding"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    variation: VariationSpec = field(default_factory=VariationSpec)
    train: TrainConfig = field(default_factory=lambda: TRAIN_PRESETS["desk"])
    model: ModelConfig = field(default_factory=ModelConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    preset: Optional[str] = None
    output: Optional[str] = None
    seed: int = 0

    @property
    def upper_bound(self) -> bool:
        return self.preset == "upper_bound"

    def build_schedule(self) -> TaskSchedule:
        s = self.schedule
        if s.order is not None:
            order = list(s.order)
        else:
            seed = self.seed if s.order_seed is None else s.order_seed
            universe = self.dataset.num_classes
            order = np.random.default_rng(seed).permutation(universe)[:s.total_classes].tolist()
        return TaskSchedule.from_order(order, [s.classes_per_step] * s.steps)

    def build_dataset(self) -> Dataset:
        d = self.dataset
        if d.name == "synthetic":
            seed = self.seed if d.synthetic_seed is None else d.synthetic_seed
            return generate_synthetic(dataclasses.replace(d.synthetic, seed=seed))
        return load_cifar(d.name, d.root)


# --- schema ---------------------------------------------------------------

def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _num(v):
    return (isinstance(v, (int, float))) and not isinstance(v, bool)


def _int_list(v):
    return isinstance(v, list) and all(_int(x) for x in v)


_TYPES = {int: (_int, "an integer"), float: (_num, "a number"), bool: (lambda v: isinstance(v, bool), "a boolean"),
          str: (lambda v: isinstance(v, str), "a string"), list: (_int_list, "a list of integers")}

_SCHEMA = {
    "dataset": {"name": str, "root": str},
    "dataset.synthetic": {"num_classes": int, "train_per_class": int, "test_per_class": int,
                          "input_dim": int, "separation": float, "noise": float, "seed": int},
    "schedule": {"steps": int, "classes_per_step": int, "order": list, "order_seed": int},
    "variation": {f.name: (str if f.type == "str" else bool) for f in dataclasses.fields(VariationSpec)},
    "train": {"preset": str, "epochs": int, "batch_size": int, "lr": float, "momentum": float,
              "weight_decay": float, "milestones": list, "lr_decay": float, "temperature": float,
              "lambda_override": float, "augment": bool},
    "model": {"hidden_dims": list, "feature_dim": int, "nonnegative_features": bool, "init": str,
              "init_scale": float},
    "memory": {"budget": int, "strategy": str},
    "": {"seed": int, "output": str, "preset": str},
}


def _locate(text: Optional[str], dotted: str) -> Optional[int]:
    """Best-effort 1-based line of ``dotted`` in the TOML source."""
    if not text:
        return None
    *section, key = dotted.split(".")
    lines = text.splitlines()
    start = 0
    if section:
        header = re.compile(r"^\s*\[\s*" + r"\s*\.\s*".join(map(re.escape, section)) + r"\s*\]")
        for i, line in enumerate(lines):
            if header.match(line):
                start = i
                break
        else:
            return None
    pat = re.compile(r"^\s*\[?\s*" + re.escape(key) + r"\b")
    for i in range(start, len(lines)):
        if pat.match(lines[i]):
            return i + 1
    return None


def _err(text, dotted, msg):
    return ConfigError(dotted, msg, _locate(text, dotted))


def _check_table(raw: dict, section: str, text) -> dict:
    schema = _SCHEMA[section]
    out = {}
    for key, value in raw.items():
        dotted = f"{section}.{key}" if section else key
        if isinstance(value, dict):
            sub = f"{section}.{key}" if section else key
            if sub not in _SCHEMA:
                raise _err(text, dotted, "unknown table")
            continue
        if key not in schema:
            raise _err(text, dotted, "unknown key")
        check, what = _TYPES[schema[key]]
        if not check(value):
            raise _err(text, dotted, f"expected {what}, got {value!r}")
        out[key] = float(value) if schema[key] is float else value
    return out


def config_from_dict(raw: dict, text: Optional[str] = None) -> ExperimentConfig:
    """Validate a parsed TOML mapping and fill defaults."""
    top = _check_table(raw, "", text)
    for name in raw:
        if isinstance(raw[name], dict) and name not in _SCHEMA:
            raise _err(text, name, "unknown table")
    for required in ("dataset", "schedule"):
        if required not in raw:
            raise ConfigError(required, "missing required table")

    def table(name):
        parts = name.split(".")
        node = raw
        for p in parts:
            node = node.get(p, {}) if isinstance(node, dict) else {}
        return _check_table(node, name, text)

    def build(cls, dotted, **kw):
        try:
            return cls(**kw)
        except ConfigError as e:
            raise ConfigError(e.field, str(e).split(": ", 1)[-1], _locate(text, e.field)) from None
        except (TypeError, ValueError, InvalidArgumentError) as e:
            raise _err(text, dotted, str(e)) from None

    preset = top.get("preset")
    if preset is not None and preset not in VARIATION_PRESETS:
        raise _err(text, "preset", f"unknown preset; expected one of {sorted(VARIATION_PRESETS)}")

    ds = table("dataset")
    syn = table("dataset.synthetic")
    synthetic_seed = syn.pop("seed", None)
    name = ds.get("name", "synthetic")
    if name != "synthetic" and name not in DATASET_CLASSES:
        raise _err(text, "dataset.name", f"expected synthetic, {', '.join(DATASET_CLASSES)}; got {name!r}")
    if name != "synthetic" and "root" not in ds:
        raise _err(text, "dataset.root", f"required for dataset {name!r}")
    dataset = DatasetConfig(name, ds.get("root"), build(SyntheticDatasetSpec, "dataset.synthetic", **syn),
                            synthetic_seed)

    sc = table("schedule")
    if "order" in sc:
        sc["order"] = tuple(sc["order"])
    schedule = build(ScheduleConfig, "schedule", **sc)
    if schedule.steps < 1 or schedule.classes_per_step < 1:
        raise _err(text, "schedule.steps", "steps and classes_per_step must be >= 1")
    if schedule.total_classes > dataset.num_classes:
        raise _err(text, "schedule.classes_per_step",
                   f"schedule needs {schedule.total_classes} classes but dataset {name!r} "
                   f"has only {dataset.num_classes} labels")
    if schedule.order is not None:
        order = schedule.order
        if len(order) != schedule.total_classes:
            raise _err(text, "schedule.order", f"has {len(order)} classes, schedule needs {schedule.total_classes}")
        if len(set(order)) != len(order) or min(order) < 0 or max(order) >= dataset.num_classes:
            raise _err(text, "schedule.order", f"must list distinct labels in 0..{dataset.num_classes - 1}")

    var_kw = dataclasses.asdict(VARIATION_PRESETS[preset]) if preset else {}
    var_kw.update(table("variation"))
    variation = build(VariationSpec, "variation", **var_kw)

    tr = table("train")
    base_name = tr.pop("preset", None)
    if base_name is not None and base_name not in TRAIN_PRESETS:
        raise _err(text, "train.preset", f"expected one of {sorted(TRAIN_PRESETS)}")
    base = TRAIN_PRESETS[base_name] if base_name else ExperimentConfig().train
    if "milestones" in tr:
        tr["milestones"] = tuple(tr["milestones"])
    train = build(lambda **kw: dataclasses.replace(base, **kw), "train", **tr)

    md = table("model")
    if "hidden_dims" in md:
        md["hidden_dims"] = tuple(md["hidden_dims"])
    model = build(ModelConfig, "model", **md)

    mem = table("memory")
    memory = build(MemoryConfig, "memory", **mem)
    if memory.strategy not in STRATEGIES:
        raise _err(text, "memory.strategy", f"expected one of {STRATEGIES}")
    if memory.budget < schedule.total_classes:
        raise _err(text, "memory.budget",
                   f"budget {memory.budget} leaves no exemplar slot for {schedule.total_classes} classes")

    return ExperimentConfig(dataset, schedule, variation, train, model, memory, preset,
                            top.get("output"), top.get("seed", 0))


def parse_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError("config", f"file {path} does not exist")
    text = path.read_text()
    return parse_config_text(text)


def parse_config_text(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError("config", f"invalid TOML: {e}", int(m.group(1)) if m else None) from None
    return config_from_dict(raw, text)


def _drop_none(d: dict) -> dict:
    return {k: v for k, v in d.items() if v is not None}


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Fully explicit mapping: parsing its TOML yields ``cfg`` again."""
    syn = dataclasses.asdict(cfg.dataset.synthetic)
    syn.pop("seed")
    if cfg.dataset.synthetic_seed is not None:
        syn["seed"] = cfg.dataset.synthetic_seed
    dataset = _drop_none({"name": cfg.dataset.name, "root": cfg.dataset.root})
    dataset["synthetic"] = syn
    schedule = _drop_none({
        "steps": cfg.schedule.steps, "classes_per_step": cfg.schedule.classes_per_step,
        "order": list(cfg.schedule.order) if cfg.schedule.order is not None else None,
        "order_seed": cfg.schedule.order_seed,
    })
    train = _drop_none(dataclasses.asdict(cfg.train))
    if "milestones" in train:
        train["milestones"] = list(train["milestones"])
    model = _drop_none(dataclasses.asdict(cfg.model))
    model["hidden_dims"] = list(model["hidden_dims"])
    out = _drop_none({"seed": cfg.seed, "output": cfg.output, "preset": cfg.preset})
    out.update({
        "dataset": dataset,
        "schedule": schedule,
        "variation": dataclasses.asdict(cfg.variation),
        "train": train,
        "model": model,
        "memory": dataclasses.asdict(cfg.memory),
    })
    return out


def serialize_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def _set_dotted(raw: dict, dotted: str, value):
    *path, key = dotted.split(".")
    node = raw
    for p in path:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(dotted, "cannot override inside a non-table value")
    node[key] = value


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply ``key=value`` strings; values are parsed as TOML literals, else taken as strings."""
    raw = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        try:
            parsed = tomllib.loads(f"v = {value}")["v"]
        except tomllib.TOMLDecodeError:
            parsed = value
        _set_dotted(raw, key, parsed)
    if "preset" in raw and any(o.split("=", 1)[0].strip() == "preset" for o in overrides):
        # a preset override replaces the variation table wholesale
        raw.pop("variation", None)
    return config_from_dict(raw)


# Desk benchmark: 10 Gaussian classes in 5 steps of 2, 20 exemplars in total.
# lr 0.05 keeps plain CE training stable enough for 3-seed comparisons.
BENCHMARK_TRAIN = dataclasses.replace(TRAIN_PRESETS["desk"], lr=0.05)


def preset(name: str, seed: int = 0) -> ExperimentConfig:
    """Desk-scale synthetic benchmark config wired to a named variation."""
    if name not in VARIATION_PRESETS:
        raise InvalidArgumentError(f"unknown preset {name!r}; expected one of {sorted(VARIATION_PRESETS)}")
    return ExperimentConfig(variation=VARIATION_PRESETS[name], train=BENCHMARK_TRAIN,
                            preset=name, seed=seed)
