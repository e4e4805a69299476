"""Acceptance suite. Each test prints one ``criterion N: PASS|FAIL`` line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""
import dataclasses
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from classinc.aligning import align_weights, column_norms, corrected_logits
from classinc.config import MemoryConfig, preset, serialize_config
from classinc.driver import run_experiment
from classinc.losses import (LossConfig, combined_loss, combined_loss_and_grad, cross_entropy_grad,
                             cross_entropy_loss, distillation_grad, distillation_loss, lambda_balance)
from classinc.memory import herding_select
from classinc.model import ClassifierHead, logits
from classinc.runs import execute

REPORT = []
SEEDS = (0, 1, 2)


def report(n, ok, detail):
    line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append(line)
    print(line)
    assert ok, line


def random_head(rng):
    d = int(rng.integers(4, 65))
    c_old, c_new = (int(v) for v in rng.integers(1, 33, size=2))
    w = rng.uniform(0, 1, size=(d, c_old + c_new))
    w[:, c_old:] *= rng.uniform(0.2, 5.0)
    return ClassifierHead(w, c_old, c_new)


def test_wa_alignment():
    rng = np.random.default_rng(0)
    heads = [random_head(rng) for _ in range(1000)]
    t0 = time.perf_counter()
    worst, identical = 0.0, True
    for h in heads:
        a = align_weights(h)
        norms = column_norms(a.weights)
        old, new = norms[:h.old_count].mean(), norms[h.old_count:].mean()
        worst = max(worst, abs(new - old) / old)
        identical &= np.array_equal(a.weights[:, :h.old_count], h.weights[:, :h.old_count])
    secs = time.perf_counter() - t0
    report(1, worst < 1e-9 and identical and secs < 10,
           f"max rel gap {worst:.2e} (< 1e-9), old columns identical={identical}, {secs:.2f}s (< 10s)")


def test_logit_rescaling_equivalence():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(1000):
        h = random_head(rng)
        f = rng.normal(size=(1, h.feature_dim))
        raw = logits(h, f)
        gamma = column_norms(h.weights)[:h.old_count].mean() / column_norms(h.weights)[h.old_count:].mean()
        expect = corrected_logits(raw[:, :h.old_count], raw[:, h.old_count:], gamma)
        worst = max(worst, float(np.abs(logits(align_weights(h), f) - expect).max()))
    report(2, worst < 1e-9, f"max elementwise gap {worst:.2e} (< 1e-9)")


def test_within_group_argmax():
    rng = np.random.default_rng(2)
    changed = 0
    for _ in range(1000):
        h = random_head(rng)
        f = rng.normal(size=(1, h.feature_dim))
        before, after = logits(h, f)[0], logits(align_weights(h), f)[0]
        k = h.old_count
        changed += np.argmax(before[:k]) != np.argmax(after[:k])
        changed += np.argmax(before[k:]) != np.argmax(after[k:])
    report(3, changed == 0, f"{changed} of 2000 group argmaxes changed")


def numeric_grad(fn, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (fn(x + e) - fn(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def test_gradient_checks():
    rng = np.random.default_rng(3)
    worst = {"ce": 0.0, "kd": 0.0, "combined": 0.0}
    for _ in range(100):
        s = rng.normal(scale=2.0, size=(1, 6))
        y = int(rng.integers(0, 6))
        old = int(rng.integers(1, 6))
        t = rng.normal(scale=2.0, size=(1, old))
        T = float(rng.uniform(0.5, 4.0))
        cfg = LossConfig(temperature=T)
        pairs = {
            "ce": (cross_entropy_grad(s, [y]), lambda z: cross_entropy_loss(z, [y])),
            "kd": (distillation_grad(s, t, old, T), lambda z: distillation_loss(z, t, old, T)),
            "combined": (combined_loss_and_grad(s, [y], t, cfg, old, 6 - old)[1],
                         lambda z: combined_loss(z, [y], t, cfg, old, 6 - old)),
        }
        for name, (analytic, fn) in pairs.items():
            worst[name] = max(worst[name], rel_err(analytic, numeric_grad(fn, s)))
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(4, max(worst.values()) < 1e-4, f"max relative error {detail} (< 1e-4)")


def test_kd_locality():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(200):
        c = int(rng.integers(2, 20))
        old = int(rng.integers(1, c))
        s = rng.normal(size=(3, c))
        t = rng.normal(size=(3, old))
        base = distillation_loss(s, t, old, 2.0)
        p = s.copy()
        p[:, old:] += rng.normal(scale=100.0, size=(3, c - old))
        worst = max(worst, abs(distillation_loss(p, t, old, 2.0) - base))
    report(5, worst <= 1e-12, f"max change {worst:.1e} (<= 1e-12)")


def test_lambda_schedule():
    rng = np.random.default_rng(5)
    s = rng.normal(size=(8, 4))
    y = rng.integers(0, 4, size=8)
    first = combined_loss(s, y, None, LossConfig(), 0, 4) == cross_entropy_loss(s, y)
    ok = lambda_balance(0, 4) == 0 and first and lambda_balance(80, 20) == 0.8
    report(6, ok, f"lambda(0,4)={lambda_balance(0, 4)}, step-1 loss is CE={first}, "
                  f"lambda(80,20)={lambda_balance(80, 20)}")


def herding_oracle(f, m):
    n, d = len(f), len(f[0])
    mu = [sum(f[i][j] for i in range(n)) / n for j in range(d)]
    chosen = []
    for k in range(1, m + 1):
        best, best_dist = None, None
        for i in range(n):
            if i in chosen:
                continue
            mean = [(sum(f[c][j] for c in chosen) + f[i][j]) / k for j in range(d)]
            dist = sum((mean[j] - mu[j]) ** 2 for j in range(d)) ** 0.5
            if best is None or dist < best_dist:
                best, best_dist = i, dist
        chosen.append(best)
    return chosen


def test_herding_oracle():
    rng = np.random.default_rng(6)
    mismatches, prefix_breaks = 0, 0
    for _ in range(200):
        n = int(rng.integers(1, 9))
        f = rng.normal(size=(n, 3))
        full = herding_select(f, n)
        mismatches += full != herding_oracle(f.tolist(), n)
        prefix_breaks += sum(herding_select(f, m) != full[:m] for m in range(n + 1))
    report(7, mismatches == 0 and prefix_breaks == 0,
           f"{mismatches} oracle mismatches, {prefix_breaks} prefix violations over 200 trials")


# --- desk-scale benchmark ------------------------------------------------

@pytest.fixture(scope="module")
def benchmark():
    runs, timing = {}, {}
    for name in ("variation1", "variation2", "variation3", "ours"):
        t0 = time.perf_counter()
        for seed in SEEDS:
            cfg = preset(name, seed)
            runs[name, seed] = run_experiment(cfg.build_dataset(), cfg.build_schedule(), cfg.variation, cfg.train,
                                              cfg.model, cfg.memory.budget, cfg.memory.strategy, seed)
        timing[name] = time.perf_counter() - t0
    return runs, timing


def test_new_class_norms_dominate(benchmark):
    runs, timing = benchmark
    steps = len(runs["variation3", 0].steps)
    ratios = [np.mean([runs["variation3", s].steps[b].norms.mean_new / runs["variation3", s].steps[b].norms.mean_old
                       for s in SEEDS]) for b in range(1, steps)]
    ok = all(r > 1 for r in ratios) and timing["variation3"] < 300
    report(8, ok, f"new/old norm ratio at steps 2..{steps}: {', '.join(f'{r:.2f}' for r in ratios)} (> 1), "
                  f"{timing['variation3']:.1f}s (< 300s)")


def test_kd_reduces_old_old_errors(benchmark):
    runs, _ = benchmark
    ce = np.mean([runs["variation1", s].steps[-1].errors["e_oo"] for s in SEEDS])
    kd = np.mean([runs["variation3", s].steps[-1].errors["e_oo"] for s in SEEDS])
    report(9, kd < ce, f"final-step mean e_oo CE+KD {kd:.1f} < CE {ce:.1f}")


def test_variation_ordering(benchmark):
    runs, timing = benchmark
    acc = {n: np.array([runs[n, s].steps[-1].top1 for s in SEEDS]) for n in ("variation1", "variation2",
                                                                              "variation3", "ours")}
    mean = {n: a.mean() for n, a in acc.items()}
    std = {n: a.std(ddof=1) for n, a in acc.items()}
    checks = []
    for hi, lo in (("ours", "variation2"), ("variation2", "variation1"), ("ours", "variation3")):
        margin, spread = mean[hi] - mean[lo], max(std[hi], std[lo])
        checks.append((hi, lo, margin, spread, margin > spread))
    total = sum(timing.values())
    ok = all(c[-1] for c in checks) and total < 900
    detail = "; ".join(f"{hi}-{lo} {m:.3f} > {s:.3f}" for hi, lo, m, s, _ in checks)
    means = ", ".join(f"{n} {mean[n]:.3f}±{std[n]:.3f}" for n in acc)
    report(10, ok, f"{means}; margins {detail}; {total:.1f}s (< 900s)")


def test_cli_determinism(tmp_path):
    cfg_path = tmp_path / "exp.toml"
    cfg_path.write_text(serialize_config(preset("ours", 0)))
    for name in ("a", "b"):
        subprocess.run([sys.executable, "-m", "classinc", "run", "--config", str(cfg_path), "--output",
                        str(tmp_path / name), "--no-plots"], check=True)
    a, b = ((tmp_path / n / "metrics.csv").read_bytes() for n in ("a", "b"))
    report(11, a == b and len(a) > 0, f"metrics.csv byte-identical={a == b} ({len(a)} bytes)")


def test_memory_discipline(tmp_path):
    cfg = dataclasses.replace(preset("ours", 0), memory=MemoryConfig(budget=50))
    execute(cfg, tmp_path / "run", plots=False)
    totals, spreads = [], []
    for b in range(1, cfg.schedule.steps + 1):
        per_class = json.loads((tmp_path / "run" / "memory" / f"step_{b}.json").read_text())["per_class"]
        counts = [len(v) for v in per_class.values()]
        totals.append(sum(counts))
        spreads.append(max(counts) - min(counts))
    ok = cfg.schedule.steps == 5 and max(totals) <= 50 and max(spreads) <= 1
    report(12, ok, f"stored per step {totals} (<= 50), count spread per step {spreads} (<= 1)")
