"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers
(visible with ``pytest -s`` or when run as ``python tests/test_acceptance.py``).
Seeds used here are disjoint from the ones the defaults were tuned on (0-3).
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import subprocess
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from miff.features import FeatureStream
from miff.geometry import (
    RansacConfig,
    estimate_homography_dlt,
    homography_fractional_power,
    normalize_homography,
    ransac_homography,
)
from miff.graph import GraphWeights, appearance_cost, build_graph, shortest_path
from miff.metrics import instability_index
from miff.pipeline import PipelineConfig, run_pipeline
from miff.profile import SEMANTIC, otsu_bin_index
from miff.pso import PsoConfig, fitness_lambda, optimize_speedup_lambdas
from miff.scenario import preset, synthesize_scenario
from miff.speedup import SpeedupProblem, solve_speedups

F_D = 10.0


def verdict(name: str, ok: bool, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


def _config(stabilize: bool, seed: int) -> PipelineConfig:
    cfg = PipelineConfig().with_overrides(seed=seed, required_speedup=F_D)
    return dataclasses.replace(cfg, stabilizer=dataclasses.replace(cfg.stabilizer, enabled=stabilize))


# --- pipeline-level criteria -------------------------------------------------


def test_speedup_accuracy():
    densities = ["0p", "25p", "50p", "75p"]
    errors, times = [], []
    for k in range(20):
        length = 3000 + round(k * 7000 / 19)
        stream, _ = synthesize_scenario(preset(densities[k % 4], length, seed=200 + k))
        t0 = time.perf_counter()
        res = run_pipeline(stream, _config(False, 200 + k))
        times.append(time.perf_counter() - t0)
        errors.append(res.report["speedup_abs_error"])
    # Runtime including stabilization, on the longest scenario.
    stream, _ = synthesize_scenario(preset("25p", 10000, seed=250))
    t0 = time.perf_counter()
    run_pipeline(stream, _config(True, 250))
    full = time.perf_counter() - t0
    mean_err = float(np.mean(errors))
    ok = mean_err <= 0.5 and max(times) < 60 and full < 60
    verdict(
        "speed-up accuracy",
        ok,
        f"mean |achieved-required| = {mean_err:.3f} (<= 0.5), max error {max(errors):.3f}, "
        f"slowest run {max(times):.1f} s, full 10k-frame run with stabilization {full:.1f} s (< 60 s)",
    )


def test_semantic_emphasis():
    ratios, bad = [], []
    for length in (3000, 6000):
        for seed in range(100, 108):
            stream, _ = synthesize_scenario(preset("25p", length, seed=seed))
            res = run_pipeline(stream, _config(False, seed))
            ratios.append(res.report["retention"] / res.report["uniform_retention"])
            for s in res.tree.leaves:
                if (s.kind == SEMANTIC) != (s.speedup < F_D):
                    bad.append((length, seed, s.to_dict()))
    mean = float(np.mean(ratios))
    verdict(
        "semantic emphasis",
        mean >= 1.5 and not bad,
        f"mean retention ratio vs uniform = {mean:.3f} (>= 1.5) over {len(ratios)} runs "
        f"[min {min(ratios):.3f}, max {max(ratios):.3f}]; speed-up ordering violations: {len(bad)}",
    )


def _block_rate(tree, a, b):
    rates = tree.speedup_per_frame()[a:b].astype(float)
    return len(rates) / float(np.sum(1.0 / rates))


def test_multi_importance_ordering():
    rows = []
    for length, seed in itertools.product((3000, 6000), (100, 101, 102)):
        spec = preset("two-level", length, seed=seed)
        stream, _ = synthesize_scenario(spec)
        tree = run_pipeline(stream, _config(False, seed)).tree
        (a1, b1, _), (a2, b2, _) = spec.semantic_blocks
        rows.append((length, seed, _block_rate(tree, a1, b1), _block_rate(tree, a2, b2)))
    ok = all(hi < lo for _, _, lo, hi in rows)
    detail = ", ".join(f"L={l} s={s}: {lo:.2f} vs {hi:.2f}" for l, s, lo, hi in rows)
    verdict("multi-importance ordering", ok, f"low-intensity vs high-intensity block speed-up: {detail}")


# --- oracle equivalences -----------------------------------------------------


def _enumerate_min(graph):
    """Cheapest source-to-sink chain by depth-first enumeration of every chain."""
    n, W, tau = graph.n, graph.weights, graph.tau_max
    sinks = range(n - min(graph.border, n), n)
    best = math.inf

    def walk(v, cost):
        nonlocal best
        if v in sinks:
            best = min(best, cost)
        for s in range(1, min(tau, n - 1 - v) + 1):
            walk(v + s, cost + W[v, s - 1])

    for v in range(min(graph.border, n)):
        walk(v, 0.0)
    return best


def test_oracle_paths():
    rng = np.random.default_rng(300)
    mismatches = 0
    for _ in range(200):
        n = int(rng.integers(1, 16))
        tau = int(rng.integers(1, 6))
        frames = []
        for k in range(n + 1):
            frames.append(
                dataclasses.replace(
                    _frame(k),
                    foe=tuple(rng.uniform(0, 100, 2)),
                    flow_mean_magnitude=float(rng.uniform(0, 3)),
                    histogram=tuple(rng.dirichlet(np.ones(5))),
                )
            )
        stream = FeatureStream(tuple(frames), 30.0)
        w = GraphWeights(*rng.uniform(0, 3, 4), tau_max=tau, tau_b=int(rng.integers(1, tau + 1)))
        g = build_graph(stream, (0, n), w, float(rng.integers(1, 6)), scores=rng.uniform(0, 1, n + 1))
        if shortest_path(g)[1] != _enumerate_min(g):
            mismatches += 1
    verdict("oracle paths", mismatches == 0, f"{200 - mismatches}/200 segments match exhaustive enumeration exactly")


def _frame(k):
    from miff.features import FrameFeatures

    return FrameFeatures(frame_index=k, width=100, height=100)


def _brute_speedups(p: SpeedupProblem):
    total = p.L_s + p.L_ns
    lo = max(1, math.ceil(Fraction(p.L_s, total) * Fraction(p.F_d)))
    best = None
    for fs in range(lo, math.floor(p.F_d) + 1):
        for fns in range(math.ceil(p.F_d), math.floor(p.F_max) + 1):
            d = abs(total / p.F_d - (p.L_s / fs + p.L_ns / fns))
            obj = d + p.lambda1 * abs(fns - fs) + p.lambda2 * abs(fs)
            if best is None or obj < best[0]:
                best = (obj, fs, fns)
    return best


def test_oracle_speedups():
    rng = np.random.default_rng(301)
    mismatches = violations = 0
    for _ in range(100):
        F_d = int(rng.integers(1, 21))
        p = SpeedupProblem(
            int(rng.integers(0, 10000)),
            int(rng.integers(1, 10000)),
            F_d,
            float(rng.uniform(0, 10)),
            float(rng.uniform(0, 10)),
            F_d * int(rng.integers(1, 11)),
        )
        sol = solve_speedups(p)
        obj, fs, fns = _brute_speedups(p)
        if (sol.F_s, sol.F_ns, sol.objective) != (fs, fns, obj):
            mismatches += 1
        floor = max(1, math.ceil(Fraction(p.L_s, p.total) * p.F_d))
        if not (sol.F_s <= p.F_d and sol.F_ns >= p.F_d and sol.F_s >= floor):
            violations += 1
    verdict(
        "oracle speed-ups",
        mismatches == 0 and violations == 0,
        f"{100 - mismatches}/100 exact matches with enumeration; r1-r3 violations: {violations}",
    )


def _brute_otsu(counts):
    c = [Fraction(int(v)) for v in counts]
    N = sum(c)
    score = {}
    for k in range(1, len(c)):
        n0 = sum(c[:k])
        n1 = N - n0
        if n0 and n1:
            mu0 = sum(i * c[i] for i in range(k)) / n0
            mu1 = sum(i * c[i] for i in range(k, len(c))) / n1
            score[k] = n0 * n1 * (mu0 - mu1) ** 2 / (N * N)
    best = max(score.values())
    k = min(j for j, v in score.items() if v == best)
    end = k
    while end + 1 < len(c) and c[end] == 0:
        end += 1
    return (k + end) // 2


def test_oracle_otsu():
    rng = np.random.default_rng(302)
    mismatches = 0
    for i in range(100):
        counts = rng.integers(0, 200, 256)
        if i % 2:
            counts[rng.random(256) < 0.6] = 0
        if otsu_bin_index(counts.tolist()) != _brute_otsu(counts):
            mismatches += 1
    verdict("oracle Otsu", mismatches == 0, f"{100 - mismatches}/100 histograms give the brute-force bin index")


def test_pso_quality():
    rng = np.random.default_rng(303)
    grid = np.linspace(0, 10, 50)
    worse, rising = [], 0
    for i in range(10):
        L_s, L_ns = int(rng.integers(100, 5000)), int(rng.integers(100, 9000))
        res = optimize_speedup_lambdas(L_s, L_ns, F_D, config=PsoConfig(seed=i))
        best_grid = min(fitness_lambda((a, b), L_s, L_ns, F_D) for a in grid for b in grid)
        if res.fitness > best_grid:
            worse.append((L_s, L_ns, res.fitness, best_grid))
        rising += any(b > a for a, b in zip(res.trace, res.trace[1:]))
    verdict(
        "PSO quality",
        not worse and rising == 0,
        f"PSO <= 50x50 grid on {10 - len(worse)}/10 instances; traces with an increase: {rising}",
    )


# --- geometry, instability, EMD ----------------------------------------------


def _random_h(rng):
    H = np.eye(3)
    H[:2, :2] += rng.uniform(-0.2, 0.2, (2, 2))
    H[:2, 2] = rng.uniform(-20, 20, 2)
    H[2, :2] = rng.uniform(-1e-4, 1e-4, 2)
    return normalize_homography(H)


def _map(H, pts):
    hom = np.c_[pts, np.ones(len(pts))] @ H.T
    return hom[:, :2] / hom[:, 2:]


def test_geometry():
    rng = np.random.default_rng(304)
    ransac_err = []
    for i in range(100):
        H = _random_h(rng)
        src = rng.uniform(0, 200, (100, 2))
        dst = _map(H, src)
        bad = rng.permutation(100)[:30]
        dst[bad] = rng.uniform(0, 200, (30, 2))
        est, _ = ransac_homography(src, dst, RansacConfig(iterations=500, threshold=1.0, seed=i))
        ransac_err.append(np.linalg.norm(est - H))
    root_err, exact = [], True
    for _ in range(100):
        H = _random_h(rng)
        R = homography_fractional_power(H, 0.5)
        root_err.append(np.linalg.norm(normalize_homography(R @ R) - H))
        exact &= np.array_equal(homography_fractional_power(H, 0.0), np.eye(3))
        exact &= np.array_equal(homography_fractional_power(H, 1.0), H)
    ok = max(ransac_err) <= 1e-6 and max(root_err) <= 1e-6 and exact
    verdict(
        "geometry",
        ok,
        f"RANSAC max Frobenius error {max(ransac_err):.2e}, H^1/2 round trip max {max(root_err):.2e} "
        f"(<= 1e-6), H^0 = I and H^1 = H exact: {exact}",
    )


def test_instability():
    rng = np.random.default_rng(305)
    const = instability_index([np.full((64, 64), 90.0)] * 100)
    noise = instability_index([128 + rng.normal(0, 10, (64, 64)) for _ in range(100)])
    stream, truth = synthesize_scenario(preset("jitter", 1500, seed=100, render_rasters=True))
    inst = run_pipeline(stream, _config(True, 100), truth.rasters).report["instability"]
    ok = const == 0 and abs(noise - 10) <= 1.0 and inst["stabilized"] <= inst["unstabilized"]
    verdict(
        "instability index",
        ok,
        f"constant video {const}, Gaussian sigma=10 video {noise:.3f} (within 10%), "
        f"jitter scenario stabilized {inst['stabilized']:.3f} vs unstabilized {inst['unstabilized']:.3f}",
    )


def test_emd():
    rng = np.random.default_rng(306)
    worst = 0.0
    symmetric = triangle = True
    for _ in range(1000):
        n = int(rng.integers(2, 64))
        a, b, c = rng.dirichlet(np.ones(n), 3)
        analytic = sum(abs(x) for x in itertools.accumulate(a - b)) / (n - 1)
        worst = max(worst, abs(appearance_cost(a, b) - analytic))
        symmetric &= abs(appearance_cost(a, b) - appearance_cost(b, a)) <= 1e-9
        triangle &= appearance_cost(a, c) <= appearance_cost(a, b) + appearance_cost(b, c) + 1e-9
    verdict(
        "EMD",
        worst <= 1e-9 and symmetric and triangle,
        f"max deviation from CDF-difference value {worst:.1e} over 1000 pairs; symmetry {symmetric}, triangle {triangle}",
    )


def test_determinism(tmp_path):
    miff = [sys.executable, "-m", "miff"]
    subprocess.run(
        miff + ["synth", "--preset", "25p", "--length", "1200", "--rasters", "--seed", "107", "--out", str(tmp_path / "in")],
        check=True,
    )
    feats = str(tmp_path / "in" / "features.jsonl")
    for d in ("a", "b"):
        subprocess.run(miff + ["run", feats, "--seed", "107", "--out", str(tmp_path / d)], check=True)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = [n for n in names if (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()]
    verdict("determinism", len(same) == len(names) > 0, f"{len(same)}/{len(names)} output files byte-identical")


if __name__ == "__main__":
    import tempfile

    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                failed += 1
    sys.exit(1 if failed else 0)
