"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from imle import cli
from imle import distributions as dist
from imle import estimators as est
from imle import harness as h
from imle import noise as nz
from imle.distributions import StateSpace
from imle.estimators import EstimatorKind, EstimatorSpec, TargetRule
from imle.noise import NoiseSpec
from imle.solvers import map_state

from oracles import central_difference

# Values computed with mpmath at 50 digits.
H10_MINUS_LN10 = 0.62638316097420828424
SUM_INV_SQ_10 = 1.5497677311665406904


def test_c01_gumbel_max(record):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    space = StateSpace.categorical(5)
    worst = 0.0
    for _ in range(3):
        theta = rng.normal(size=5)
        for tau in (0.5, 1.0, 2.0):
            freq = dist.marginals_pam(space, theta, 1.0, NoiseSpec.gumbel(tau), 200_000, rng)
            soft = np.exp(theta / tau - np.max(theta / tau))
            soft /= soft.sum()
            worst = max(worst, float(np.max(np.abs(freq - soft))))
    elapsed = time.perf_counter() - start
    ok = worst <= 0.01 and elapsed < 10
    record(1, "Gumbel-max frequencies match softmax", ok, f"max |err| {worst:.4f}, {elapsed:.1f}s")
    assert ok


def test_c02_sog_sum_moments(record):
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    total = nz.sample_sog(5, 1.0, 10, rng, size=(1_000_000, 5)).sum(axis=1)
    mean, var = float(total.mean()), float(total.var(ddof=1))
    elapsed = time.perf_counter() - start
    mean_ok = abs(mean - H10_MINUS_LN10) <= 0.01
    var_ok = abs(var / SUM_INV_SQ_10 - 1) <= 0.02
    ok = mean_ok and var_ok and elapsed < 30
    record(2, "sum of SoG draws has the truncated-series moments", ok,
           f"mean {mean:.4f} vs {H10_MINUS_LN10:.4f}, var {var:.4f} vs {SUM_INV_SQ_10:.4f}, {elapsed:.1f}s")
    assert ok


def test_c03_bias_bounds(record):
    start = time.perf_counter()
    failures = [
        (s, tau)
        for tau in (0.5, 1.0, 5.0)
        for s in range(1, 1001)
        if not tau / (2 * (s + 1)) < nz.sog_mean_bias(s, tau) < tau / (2 * s)
    ]
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 1
    record(3, "SoG mean bias strictly inside its bounds", ok, f"{len(failures)} violations, {elapsed:.2f}s")
    assert ok


def test_c04_marginal_difference_gradient(record):
    start = time.perf_counter()
    rng = np.random.default_rng(404)
    worst = 0.0
    for space in (StateSpace.k_subset(6, 3), StateSpace.categorical(5)):
        for _ in range(10):
            theta, theta_q = rng.normal(size=space.m), rng.normal(size=space.m)
            fd = central_difference(lambda t: est.kl_divergence(space, theta_q, t), theta)
            worst = max(worst, float(np.max(np.abs(fd - est.exact_mle_gradient(space, theta, theta_q)))))
            fd_a = central_difference(lambda t: dist.log_partition(space, t), theta)
            worst = max(worst, float(np.max(np.abs(fd_a - dist.marginals_exact(space, theta)))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-5 and elapsed < 5
    record(4, "exact MLE gradient matches finite differences", ok, f"max |err| {worst:.2e}, {elapsed:.2f}s")
    assert ok


def test_c05_perceptron_identity(record):
    rng = np.random.default_rng(505)
    mismatches = 0
    for space in (StateSpace.categorical(6), StateSpace.k_subset(8, 3), StateSpace.grid_path(3, 3)):
        grid = space.kind is dist.SpaceKind.GRID_PATH
        states = dist.enumerate_states(space)
        for _ in range(100):
            if grid:
                theta = -rng.uniform(0.1, 2.0, size=space.m)
                # Hamming targets on grids are minimal paths, as produced by the solver.
                y = map_state(space, -rng.uniform(0.1, 2.0, size=space.m)).state
            else:
                theta = rng.normal(size=space.m)
                y = states[rng.integers(len(states))]
            z, eps = est.imle_forward(space, theta, NoiseSpec.dirac(), rng)
            g = est.imle_backward(space, theta, eps, z, est.hamming_grad(y), TargetRule.co())
            mismatches += not np.array_equal(g.values, map_state(space, theta).state - y)
    ok = mismatches == 0
    record(5, "Hamming + CO target + no noise equals MAP(theta) - y", ok, f"{mismatches} mismatches of 300")
    assert ok


def test_c06_regret_identity(record):
    rng = np.random.default_rng(606)
    space = StateSpace.k_subset(8, 3)
    mismatches = 0
    for _ in range(100):
        theta = rng.normal(size=8)
        c = rng.uniform(0.1, 3.0, size=8)
        z, eps = est.imle_forward(space, theta, NoiseSpec.sog(3, 1.0, 10), rng)
        g = est.imle_backward(space, theta, eps, z, est.regret_grad(c), TargetRule.co())
        expected = map_state(space, theta + eps).state - map_state(space, -c + eps).state
        mismatches += not np.array_equal(g.values, expected)
    ok = mismatches == 0
    record(6, "regret + CO target equals MAP(theta+eps) - MAP(-c+eps)", ok, f"{mismatches} mismatches of 100")
    assert ok


def test_c07_map_optimality(record):
    rng = np.random.default_rng(707)
    spaces = [StateSpace.categorical(m) for m in (2, 5, 12)]
    spaces += [StateSpace.k_subset(m, k) for m, k in ((4, 2), (6, 3), (8, 4), (10, 5), (12, 1), (12, 6), (12, 11))]
    spaces += [StateSpace.grid_path(r, c) for r, c in ((2, 2), (2, 3), (3, 3), (3, 4), (4, 4))]
    failures = checked = 0
    for space in spaces:
        states = dist.enumerate_states(space)
        for _ in range(200):
            if space.kind is dist.SpaceKind.GRID_PATH:
                theta = -rng.uniform(0.01, 5.0, size=space.m)
            else:
                theta = rng.normal(size=space.m)
            res = map_state(space, theta)
            best = max(float(z @ theta) for z in states)
            failures += not (space.contains(res.state) and float(res.state @ theta) == best)
            checked += 1
    ok = failures == 0
    record(7, "MAP solvers attain the enumerated maximum", ok, f"{failures} failures over {checked} cases")
    assert ok


def test_c08_synthetic_study_direction(record):
    start = time.perf_counter()
    runs = 50
    cfg = h.SgdConfig(momentum=0.9, steps=50, runs=runs, seed=0)
    imle_spec = EstimatorSpec(EstimatorKind.IMLE, NoiseSpec.sog(1, 5.0, 10), 1, TargetRule.pid(1.0))
    ste_spec = EstimatorSpec(EstimatorKind.STE, NoiseSpec.gumbel(1.0), 1)
    sfe_spec = EstimatorSpec(EstimatorKind.SFE, NoiseSpec.dirac(), 1)
    problem = h.ToyProblem.from_seed(0, imle_spec)
    _, imle_lr, imle_mean, _ = h.tune_toy(problem, cfg)
    _, ste_lr, ste_mean, _ = h.tune_toy(problem.with_estimator(ste_spec), cfg)
    _, sfe_lr, sfe_mean, _ = h.tune_toy(problem.with_estimator(sfe_spec), h.SgdConfig(momentum=0.9, steps=500, runs=runs))
    elapsed = time.perf_counter() - start
    ok = imle_mean < ste_mean and sfe_mean > imle_mean and elapsed < 300
    record(8, "I-MLE beats STE; SFE at 500 steps stays above I-MLE at 50", ok,
           f"I-MLE {imle_mean:.4f} (lr {imle_lr}), STE {ste_mean:.4f} (lr {ste_lr}), "
           f"SFE {sfe_mean:.4f} (lr {sfe_lr}), {elapsed:.0f}s")
    assert ok


def test_c09_sog_vs_gumbel_grid(record):
    start = time.perf_counter()
    spec = EstimatorSpec(EstimatorKind.IMLE, NoiseSpec.sog(1, 5.0, 10), 1, TargetRule.pid(1.0))
    problem = h.ToyProblem.from_seed(0, spec)
    res = h.run_sensitivity_grid(problem, h.DEFAULT_LAMBDAS, h.DEFAULT_LRS, h.SgdConfig(runs=100, seed=0))
    frac = res.fraction_better("sog", "gumbel")
    elapsed = time.perf_counter() - start
    ok = frac > 0.5 and elapsed < 1800
    record(9, "SoG noise better than Gumbel in most grid cells", ok,
           f"{int(round(frac * 25))}/25 cells, {elapsed:.0f}s")
    assert ok


def test_c10_shortest_path_learning(record):
    start = time.perf_counter()
    data = h.gen_path_dataset(8, 200, 5, seed=0)
    cfg = h.SgdConfig(learning_rate=0.001, momentum=0.9, steps=50, seed=0)
    gains = {}
    for name, (spec, loss) in h.default_path_estimators(data).items():
        _, trace = h.train_path_model(data, spec, loss, cfg)
        gains[name] = (trace.metrics["baseline"], float(trace.metrics["accuracy"][-1]))
    elapsed = time.perf_counter() - start
    ok = all(final - base >= 0.30 for base, final in gains.values()) and elapsed < 300
    detail = ", ".join(f"{k} {b:.3f}->{f:.3f}" for k, (b, f) in gains.items())
    record(10, "linear path model gains at least 30 points of accuracy", ok, f"{detail}, {elapsed:.0f}s")
    assert ok


REPLAY_CASES = {
    "toy-topk": ["--runs", "4", "--steps", "10"],
    "sensitivity": ["--runs", "3", "--steps", "5", "--lambdas", "1,10", "--lrs", "0.1,0.3"],
    "sog-stats": ["--samples", "20000"],
    "gumbel-max-check": ["--samples", "20000"],
    "shortest-path": ["--grid-size", "5", "--n-examples", "20", "--steps", "3", "--loss", "regret",
                      "--noise", "sog"],
    "oracle-dump": ["--space", "grid-path", "--grid-size", "3"],
}


def test_c11_manifest_replay(tmp_path, record):
    differing = []
    for name, extra in REPLAY_CASES.items():
        first, second = tmp_path / f"{name}-a", tmp_path / f"{name}-b"
        assert cli.main(["--experiment", name, "--seed", "13", "--out", str(first), *extra]) == 0
        assert cli.main(["--config", str(first / "manifest.ini"), "--out", str(second)]) == 0
        csvs = sorted(p.name for p in first.glob("*.csv"))
        if not csvs or csvs != sorted(p.name for p in second.glob("*.csv")):
            differing.append(name)
            continue
        if any((first / f).read_bytes() != (second / f).read_bytes() for f in csvs):
            differing.append(name)
    ok = not differing
    record(11, "CLI manifest replay is byte-identical", ok,
           f"{len(REPLAY_CASES) - len(differing)}/{len(REPLAY_CASES)} experiments identical")
    assert ok
