"""Run directories: executing a config and reading its artifacts back.

Layout of a run directory::

    config.lock               resolved config (TOML), enough to re-run
    metrics/step_<b>.json     one StepMetrics record per step
    metrics.csv               aggregate table, one row per step
    timings.csv               wall-clock seconds per step
    checkpoints/step_<b>.npz  model after the step's correction
    memory/step_<b>.json      exemplar manifest after the step
    summary.csv, summary.txt  written by ``analyze``
    figures/norms_step<b>.png, figures/confusion_step<b>.png
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

from filelock import FileLock, Timeout

from .config import ExperimentConfig, parse_config, serialize_config
from .driver import ExperimentResult, run_experiment
from .errors import ConfigError
from .metrics import metrics_csv, read_metrics_json, summarize, write_metrics_json
from .model import save_checkpoint

log = logging.getLogger(__name__)

CONFIG_FILE = "config.lock"
METRICS_DIR = "metrics"
METRICS_CSV = "metrics.csv"


class RunDirectoryBusy(RuntimeError):
    pass


def _lock(run_dir: Path) -> FileLock:
    return FileLock(str(run_dir / ".lock"), timeout=0)


def prepare_output(path) -> Path:
    run_dir = Path(path)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        probe = run_dir / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise ConfigError("output", f"directory {run_dir} is not writable: {e}") from None
    return run_dir


def execute(cfg: ExperimentConfig, run_dir, plots: bool = True) -> ExperimentResult:
    """Run ``cfg`` and persist every artifact under ``run_dir``."""
    run_dir = prepare_output(run_dir)
    try:
        with _lock(run_dir):
            return _execute(cfg, run_dir, plots)
    except Timeout:
        raise RunDirectoryBusy(f"run directory {run_dir} is locked by another process") from None


def _execute(cfg: ExperimentConfig, run_dir: Path, plots: bool) -> ExperimentResult:
    (run_dir / CONFIG_FILE).write_text(serialize_config(cfg))
    for sub in (METRICS_DIR, "checkpoints", "memory"):
        d = run_dir / sub
        d.mkdir(exist_ok=True)
        for stale in d.glob("step_*"):
            stale.unlink()
    dataset = cfg.build_dataset()
    schedule = cfg.build_schedule()

    def on_step(result):
        b = result.metrics.step
        write_metrics_json(result.metrics, run_dir / METRICS_DIR / f"step_{b}.json")
        save_checkpoint(run_dir / "checkpoints" / f"step_{b}.npz", result.state.model, cfg.seed)
        if result.state.memory is not None:
            result.state.memory.save(run_dir / "memory" / f"step_{b}.json")

    result = run_experiment(dataset, schedule, cfg.variation, cfg.train, cfg.model,
                            cfg.memory.budget, cfg.memory.strategy, cfg.seed,
                            upper_bound=cfg.upper_bound, on_step=on_step)
    (run_dir / METRICS_CSV).write_text(metrics_csv(result.steps))
    (run_dir / "timings.csv").write_text(
        "step,seconds\n" + "".join(f"{m.step},{m.wallclock!r}\n" for m in result.steps))
    write_summary(run_dir, result.summary)
    if plots:
        render_figures(run_dir, result.steps)
    return result


def load_steps(run_dir) -> list:
    run_dir = Path(run_dir)
    folder = run_dir / METRICS_DIR
    files = sorted(folder.glob("step_*.json"), key=lambda p: int(re.findall(r"\d+", p.stem)[0])) \
        if folder.is_dir() else []
    if not files:
        raise FileNotFoundError(f"no step metrics found; expected {folder / 'step_1.json'}")
    return [read_metrics_json(p) for p in files]


def load_config(run_dir) -> ExperimentConfig:
    path = Path(run_dir) / CONFIG_FILE
    if not path.exists():
        raise FileNotFoundError(f"missing run config {path}")
    return parse_config(path)


def write_summary(run_dir: Path, summary) -> None:
    (run_dir / "summary.csv").write_text(summary.to_csv())
    (run_dir / "summary.txt").write_text(summary.render() + "\n")


def analyze(run_dir):
    """Recompute the summary of a finished run from its step records."""
    run_dir = Path(run_dir)
    steps = load_steps(run_dir)
    cfg = load_config(run_dir)
    summary = summarize(steps, upper_bound=steps[-1].top1 if cfg.upper_bound else None)
    write_summary(run_dir, summary)
    return summary


def render_figures(run_dir, steps=None) -> list:
    from .plotting import confusion_plot, norm_plot

    run_dir = Path(run_dir)
    steps = load_steps(run_dir) if steps is None else steps
    out = run_dir / "figures"
    paths = norm_plot([(m.step, m.norms) for m in steps], out)
    paths += confusion_plot(steps, out)
    return paths
