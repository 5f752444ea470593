"""Acceptance suite: one test per headline criterion, each at its stated tolerance.

Every test records a one-line PASS/FAIL verdict; the lines are printed in the
terminal summary (see conftest.py) and when this file is run as a script.
"""

import json
import subprocess
import sys
import time

import numpy as np
import pytest

from oracles import brute_force_assignment, brute_force_dtw
from tsjm.bgm import km_match
from tsjm.episodic import EvalConfig, FusionWeights, evaluate, nway_sweep
from tsjm.featurestore import SynthConfig, gen_synthetic
from tsjm.gradcheck import run_suites
from tsjm.mcl import init_adapters
from tsjm.otm import dtw, video_distance_ota
from tsjm.presets import CORRELATED, PERMUTED, WARP, benchmark_store, mixed_store, noise_store
from tsjm.trainer import TrainConfig, retrieval_probe, train

pytestmark = pytest.mark.slow

VERDICTS = []

DTW_ONLY = FusionWeights(1, 0, 0, 0)
KM_ONLY = FusionWeights(0, 0, 1, 0)


def verdict(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def test_km_oracle():
    start = time.perf_counter()
    r = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        W = r.uniform(-1, 1, (8, 8))
        worst = max(worst, abs(km_match(W).total_weight - brute_force_assignment(W)))
    elapsed = time.perf_counter() - start
    verdict("KM oracle", worst <= 1e-9 and elapsed < 5,
            f"200 random 8x8, max |diff| {worst:.2e} (tol 1e-9), {elapsed:.2f}s (limit 5s)")


def test_dtw_oracle():
    start = time.perf_counter()
    r = np.random.default_rng(2025)
    worst = 0.0
    for _ in range(200):
        ts, tq = r.integers(1, 7, size=2)
        D = r.uniform(0, 2, (ts, tq))
        worst = max(worst, abs(dtw(D).total_cost - brute_force_dtw(D)))
    elapsed = time.perf_counter() - start
    verdict("DTW oracle", worst <= 1e-9 and elapsed < 5,
            f"200 random up to 6x6, max |diff| {worst:.2e} (tol 1e-9), {elapsed:.2f}s (limit 5s)")


def test_gradient_suite():
    errors = run_suites(eps=1e-5, instances=50, seed=0)
    worst = max(errors, key=errors.get)
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items())
    verdict("Gradient suite", errors[worst] < 1e-4, f"50 instances each, max rel err ({detail}) < 1e-4")


def test_speed_robustness():
    store = gen_synthetic(SynthConfig(**{**WARP.__dict__, "seed": 31}))
    r = np.random.default_rng(31)
    wins = 0
    for _ in range(200):
        c, o = r.choice(store.num_classes, 2, replace=False)
        a, b = r.choice(store.by_class[c], 2, replace=False)
        x = r.choice(store.by_class[o])
        A, B, X = (store.records[i].rgb for i in (a, b, x))
        wins += video_distance_ota(A, B) < video_distance_ota(A, X)
    verdict("Speed/length robustness", wins >= 190, f"same-class DTW closer in {wins}/200 pairs (need >= 190)")


def test_subaction_misalignment():
    store = gen_synthetic(SynthConfig(**{**PERMUTED.__dict__, "seed": 41}))
    km = evaluate(store, EvalConfig(episodes=1000, seed=41, weights=KM_ONLY)).mean_accuracy
    dt = evaluate(store, EvalConfig(episodes=1000, seed=41, weights=DTW_ONLY)).mean_accuracy
    gap = 100 * (km - dt)
    verdict("Sub-action misalignment", gap >= 5,
            f"KM-only {100 * km:.1f}% vs DTW-only {100 * dt:.1f}%, gap {gap:+.1f} pts (need >= +5)")


def test_joint_fusion():
    store = mixed_store(seed=51)
    rep = evaluate(store, EvalConfig(episodes=1000, seed=51))
    dt = evaluate(store, EvalConfig(episodes=1000, seed=51, weights=DTW_ONLY)).mean_accuracy
    km = evaluate(store, EvalConfig(episodes=1000, seed=51, weights=KM_ONLY)).mean_accuracy
    fused = rep.mean_accuracy
    verdict("Joint fusion", fused >= max(dt, km) - 0.01,
            f"fused {100 * fused:.1f}% vs DTW-only {100 * dt:.1f}%, KM-only {100 * km:.1f}% (need >= max - 1 pt)")


def test_mcl_benefit():
    start = time.perf_counter()
    store = gen_synthetic(CORRELATED)
    held_pos = [store.by_class[c][0] for c in range(32)]
    held = store.subset(held_pos)
    fit = store.subset(sorted(set(range(len(store))) - set(held_pos)))
    cfg = TrainConfig(epochs=200, batch_size=32, learning_rate=1e-2, lambdas=(1, 0, 0), bottleneck=4, seed=0)
    result = train(fit, cfg)
    before = retrieval_probe(held, init_adapters(fit.dim, 4, seed=[0, 2]), 32)
    after = retrieval_probe(held, result.adapters, 32)
    l0, l1 = result.trajectory[0]["l_cl"], result.trajectory[-1]["l_cl"]
    drop = 1 - l1 / l0
    elapsed = time.perf_counter() - start
    verdict("MCL benefit", after > before and drop >= 0.2 and elapsed < 60,
            f"held-out top-1 {before:.3f} -> {after:.3f}, L_cl {l0:.3f} -> {l1:.3f} ({100 * drop:.0f}% drop, "
            f"need >= 20%), {elapsed:.1f}s (limit 60s)")


def _cli_eval(threads):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "tsjm", "eval", "--episodes", "10000", "--n-way", "5",
                           "--k-shot", "1", "--threads", str(threads), "--seed", "0"],
                          capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    report = json.loads(proc.stdout)
    report["config"].pop("threads")
    return report, time.perf_counter() - start


def test_protocol_fidelity():
    report4, elapsed = _cli_eval(4)
    report1, _ = _cli_eval(1)
    ok = elapsed < 120 and report4 == report1 and report4["episodes"] == 10000
    verdict("Protocol fidelity", ok,
            f"10,000 episodes in {elapsed:.1f}s with 4 threads (limit 120s), "
            f"{100 * report4['mean_accuracy']:.2f}% +/- {100 * report4['ci95']:.2f}, "
            f"{'identical' if report4 == report1 else 'DIFFERENT'} to 1 thread")


def test_nway_trend():
    reports = nway_sweep(benchmark_store(0), EvalConfig(episodes=2000, seed=61), range(5, 11))
    acc = [r.mean_accuracy for r in reports]
    ci = [r.ci95_halfwidth for r in reports]
    rises = [(i, acc[i + 1] - acc[i]) for i in range(len(acc) - 1) if acc[i + 1] > acc[i]]
    ok = len(rises) == 0 or (len(rises) == 1 and rises[0][1] <= 2 * max(ci[rises[0][0]], ci[rises[0][0] + 1]))
    verdict("N-way trend", ok, "N=5..10 accuracy " + " ".join(f"{100 * a:.1f}" for a in acc)
            + f" ({len(rises)} inversions)")


def test_chance_level():
    rep = evaluate(noise_store(0), EvalConfig(episodes=1000, seed=71))
    ok = abs(rep.mean_accuracy - 0.2) <= rep.ci95_halfwidth
    verdict("Chance level", ok, f"noise store 5-way {rep.mean_accuracy:.3f} +/- {rep.ci95_halfwidth:.3f} (0.20 inside CI)")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
