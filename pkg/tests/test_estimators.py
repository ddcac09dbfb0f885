import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imle import distributions as dist
from imle import estimators as est
from imle.distributions import StateSpace
from imle.estimators import TargetRule
from imle.noise import NoiseSpec
from imle.solvers import map_grid_path, map_state

from oracles import central_difference, k_subset_states

SPACES = [StateSpace.categorical(6), StateSpace.k_subset(8, 3), StateSpace.grid_path(3, 3)]


def _random_target(space, rng):
    if space.kind.value == "grid-path":
        return map_grid_path(rng.uniform(0.1, 2.0, size=(space.rows, space.cols))).state
    return dist.enumerate_states(space)[rng.integers(dist.count_states(space))]


def _random_theta(space, rng):
    if space.kind.value == "grid-path":
        return -rng.uniform(0.1, 2.0, size=space.m)
    return rng.normal(size=space.m)


class TestTargets:
    def test_pid(self):
        assert est.pid_target([1.0, 2.0], [0.5, -1.0], 2.0).tolist() == [0.0, 4.0]

    def test_co_rule(self):
        assert est.co_target([5.0, 5.0], [-0.5, 0.0]).tolist() == [0.5, 5.0]

    def test_co_zero_gradient(self, rng):
        theta = rng.normal(size=5)
        assert np.array_equal(est.co_target(theta, np.zeros(5)), theta)

    def test_co_exact_zero_semantics(self):
        assert est.co_target([3.0], [1e-300]).tolist() == [-1e-300]

    def test_co_with_regret_gradient(self, rng):
        c = rng.uniform(0.5, 2.0, size=6)
        assert np.array_equal(est.co_target(rng.normal(size=6), est.regret_grad(c)), -c)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            est.co_target([1.0, 2.0], [1.0])
        with pytest.raises(ValueError):
            est.pid_target([1.0, 2.0], [1.0], 1.0)

    @pytest.mark.parametrize("lam", [0.0, -1.0])
    def test_pid_lambda_positive(self, lam):
        with pytest.raises(ValueError):
            TargetRule.pid(lam)


class TestForward:
    def test_dirac_is_map(self, rng):
        theta = rng.normal(size=7)
        z, eps = est.imle_forward(StateSpace.k_subset(7, 2), theta, NoiseSpec.dirac(), rng)
        assert np.all(eps == 0)
        assert np.array_equal(z, map_state(StateSpace.k_subset(7, 2), theta).state)

    def test_polytope_membership(self, rng):
        for _ in range(20):
            z, _ = est.imle_forward(StateSpace.k_subset(10, 5), rng.normal(size=10), NoiseSpec.sog(5, 1.0, 10), rng)
            assert z.sum() == 5

    def test_seeded(self):
        theta = np.linspace(-1, 1, 10)
        a = est.imle_forward(StateSpace.k_subset(10, 5), theta, NoiseSpec.gumbel(), np.random.default_rng(3))
        b = est.imle_forward(StateSpace.k_subset(10, 5), theta, NoiseSpec.gumbel(), np.random.default_rng(3))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestBackward:
    @pytest.mark.parametrize("lam", [0.1, 1.0, 100.0])
    def test_zero_downstream_gradient(self, lam, rng):
        space = StateSpace.k_subset(8, 3)
        theta = rng.normal(size=8)
        z, eps = est.imle_forward(space, theta, NoiseSpec.gumbel(), rng)
        g = est.imle_backward(space, theta, eps, z, np.zeros(8), TargetRule.pid(lam))
        assert np.all(g.values == 0)

    def test_mismatched_noise_is_detectable(self, rng):
        space = StateSpace.k_subset(8, 3)
        theta = np.zeros(8)
        nonzero = 0
        for _ in range(50):
            z, eps = est.imle_forward(space, theta, NoiseSpec.gumbel(), rng)
            coupled = est.imle_backward(space, theta, eps, z, np.zeros(8), TargetRule.pid(1.0))
            assert np.all(coupled.values == 0)
            other = est.imle_backward(space, theta, -eps, z, np.zeros(8), TargetRule.pid(1.0))
            nonzero += bool(np.any(other.values != 0))
        assert nonzero > 40

    def test_rejects_nonfinite(self):
        space = StateSpace.categorical(2)
        with pytest.raises(ValueError):
            est.imle_backward(space, [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [np.inf, 0.0], TargetRule.co())

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            est.imle_backward(StateSpace.categorical(2), [0.0, 0.0], [0.0], [1.0, 0.0], [0.0, 0.0], TargetRule.co())

    @pytest.mark.parametrize("space", SPACES, ids=str)
    def test_hamming_co_gives_perceptron_rule(self, space, rng):
        for _ in range(100):
            theta = _random_theta(space, rng)
            y = _random_target(space, rng)
            z, eps = est.imle_forward(space, theta, NoiseSpec.dirac(), rng)
            g = est.imle_backward(space, theta, eps, z, est.hamming_grad(y), TargetRule.co())
            assert np.array_equal(g.values, map_state(space, theta).state - y)

    def test_regret_co_gives_perturbed_map_difference(self, rng):
        space = StateSpace.k_subset(8, 3)
        for _ in range(100):
            theta = rng.normal(size=8)
            c = rng.uniform(0.1, 3.0, size=8)
            z, eps = est.imle_forward(space, theta, NoiseSpec.sog(3, 1.0, 10), rng)
            g = est.imle_backward(space, theta, eps, z, est.regret_grad(c), TargetRule.co())
            expected = map_state(space, theta + eps).state - map_state(space, -c + eps).state
            assert np.array_equal(g.values, expected)


class TestImleGradient:
    def test_single_sample_entries(self, rng):
        space = StateSpace.k_subset(10, 5)
        b = rng.normal(size=10)
        for _ in range(30):
            g = est.imle_gradient(space, rng.normal(size=10), NoiseSpec.gumbel(), 1, TargetRule.pid(3.0),
                                  lambda z: 2 * (z - b), rng)
            assert set(np.unique(g.values)) <= {-1.0, 0.0, 1.0}

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 20), st.integers(0, 2**32 - 1))
    def test_k_subset_sums_to_zero(self, samples, seed):
        rng = np.random.default_rng(seed)
        space = StateSpace.k_subset(8, 3)
        b = rng.normal(size=8)
        g = est.imle_gradient(space, rng.normal(size=8), NoiseSpec.sog(3, 1.0), samples, TargetRule.pid(2.0),
                              lambda z: 2 * (z - b), rng)
        assert abs(g.values.sum()) < 1e-12
        assert np.all(np.abs(g.values) <= 1)
        assert len(g.samples) == samples

    def test_sign_agrees_with_exact(self):
        space = StateSpace.k_subset(6, 3)
        agree = total = 0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            theta = rng.normal(size=6)
            dl = rng.normal(size=6)
            lam = 0.5
            g = est.imle_gradient(space, theta, NoiseSpec.sog(3, 1.0, 10), 1000, TargetRule.pid(lam),
                                  lambda z: dl, rng)
            exact = est.exact_mle_gradient(space, theta, theta - lam * dl)
            mask = np.abs(exact) > 0.05
            agree += int(np.sum(np.sign(g.values[mask]) == np.sign(exact[mask])))
            total += int(mask.sum())
        assert total > 0 and agree / total >= 0.9

    def test_rejects_zero_samples(self, rng):
        with pytest.raises(ValueError):
            est.imle_gradient(StateSpace.categorical(3), np.zeros(3), NoiseSpec.dirac(), 0, TargetRule.co(),
                              lambda z: z, rng)


class TestExactMle:
    def test_same_target_is_zero(self, rng):
        theta = rng.normal(size=6)
        assert np.allclose(est.exact_mle_gradient(StateSpace.k_subset(6, 3), theta, theta), 0, atol=1e-15)

    def test_near_deterministic_target(self):
        g = est.exact_mle_gradient(StateSpace.categorical(3), np.zeros(3), [0.0, 0.0, 50.0])
        assert np.allclose(g, [1 / 3, 1 / 3, -2 / 3], atol=1e-12)

    @pytest.mark.parametrize("space", [StateSpace.k_subset(6, 3), StateSpace.categorical(5)], ids=str)
    def test_matches_kl_finite_difference(self, space, rng):
        for _ in range(10):
            theta, theta_q = rng.normal(size=space.m), rng.normal(size=space.m)
            fd = central_difference(lambda t: est.kl_divergence(space, theta_q, t), theta)
            assert np.max(np.abs(fd - est.exact_mle_gradient(space, theta, theta_q))) < 1e-5

    def test_matches_mle_objective_gradient(self, rng):
        space = StateSpace.k_subset(6, 3)
        theta, theta_q = rng.normal(size=6), rng.normal(size=6)
        fd = central_difference(lambda t: est.mle_objective(space, t, theta_q), theta)
        assert np.max(np.abs(fd - est.exact_mle_gradient(space, theta, theta_q))) < 1e-5

    def test_kl_nonnegative(self, rng):
        space = StateSpace.k_subset(6, 3)
        for _ in range(20):
            assert est.kl_divergence(space, rng.normal(size=6), rng.normal(size=6)) >= -1e-12

    def test_perceptron(self, rng):
        space = StateSpace.k_subset(6, 3)
        theta = rng.normal(size=6)
        data = dist.sample_exact(space, rng.normal(size=6), 1.0, rng, size=40)
        g = est.perceptron_gradient(space, theta, data)
        assert np.allclose(g, map_state(space, theta).state - data.mean(axis=0))


class TestStraightThrough:
    def test_constant_passthrough(self, rng):
        g = np.array([0.3, -1.0, 2.0, 0.0])
        for _ in range(5):
            out = est.ste_gradient(StateSpace.k_subset(4, 2), rng.normal(size=4), NoiseSpec.gumbel(), lambda z: g, rng)
            assert np.array_equal(out.values, g)

    def test_toy_loss(self, rng):
        b = rng.normal(size=6)
        out = est.ste_gradient(StateSpace.k_subset(6, 3), rng.normal(size=6), NoiseSpec.gumbel(), lambda z: 2 * (z - b), rng)
        assert np.allclose(out.values, 2 * (out.samples[0] - b))

    def test_seeded(self):
        theta = np.linspace(0, 1, 6)
        a = est.ste_gradient(StateSpace.k_subset(6, 3), theta, NoiseSpec.gumbel(), lambda z: z, np.random.default_rng(9))
        b = est.ste_gradient(StateSpace.k_subset(6, 3), theta, NoiseSpec.gumbel(), lambda z: z, np.random.default_rng(9))
        assert np.array_equal(a.values, b.values)


def _expected_loss_oracle(theta, loss_fn, m, k):
    """E[loss] under p(z; theta) from an independent bit enumeration."""
    states = k_subset_states(m, k)
    logw = states @ theta
    w = np.exp(logw - logw.max())
    p = w / math.fsum(w)
    return math.fsum(pi * loss_fn(z) for pi, z in zip(p, states)), states, p


class TestScoreFunction:
    def test_constant_loss(self, rng):
        g = est.sfe_gradient(StateSpace.k_subset(6, 3), rng.normal(size=6), 1.0, lambda z: 2.0, 100_000, rng)
        assert np.linalg.norm(g) < 0.05 * 2.0

    def test_single_sample_unit_loss(self):
        space = StateSpace.k_subset(6, 3)
        theta = np.linspace(-1, 1, 6)
        g = est.sfe_gradient(space, theta, 1.0, lambda z: 1.0, 1, np.random.default_rng(4))
        z = dist.sample_exact(space, theta, 1.0, np.random.default_rng(4), size=1)[0]
        assert np.allclose(g, z - dist.marginals_exact(space, theta))

    def test_unbiased(self, rng):
        m, k, S = 6, 3, 100_000
        theta = rng.normal(size=m)
        b = rng.normal(size=m)
        loss = lambda z: float(np.sum((z - b) ** 2))  # noqa: E731
        truth = central_difference(lambda t: _expected_loss_oracle(t, loss, m, k)[0], theta)
        _, states, p = _expected_loss_oracle(theta, loss, m, k)
        mu = p @ states
        per_state = np.array([loss(z) * (z - mu) for z in states])
        mean = p @ per_state
        se = np.sqrt((p @ (per_state - mean) ** 2) / S)
        g = est.sfe_gradient(StateSpace.k_subset(m, k), theta, 1.0, loss, S, rng)
        assert np.all(np.abs(g - truth) < 3 * se + 1e-9)
        assert np.all(np.abs(g - truth) < 0.05)


class TestLosses:
    def test_hamming_equal(self):
        assert est.hamming_loss([1, 0, 1], [1, 0, 1]) == 0.0

    def test_hamming_value(self):
        assert est.hamming_loss([1, 0, 1], [0, 0, 1]) == pytest.approx(1 / 3)

    def test_hamming_grad(self):
        assert est.hamming_grad([1.0, 0.0], 2).tolist() == [-0.5, 0.5]

    def test_hamming_grad_is_finite_difference(self, rng):
        y = (rng.random(7) < 0.5).astype(float)
        z = rng.random(7)
        fd = central_difference(lambda t: est.hamming_loss(t, y), z)
        assert np.allclose(fd, est.hamming_grad(y), atol=1e-9)

    def test_hamming_mismatch(self):
        with pytest.raises(ValueError):
            est.hamming_loss([1, 0], [1, 0, 0])
        with pytest.raises(ValueError):
            est.hamming_grad([1, 0], 3)

    def test_regret_zero(self):
        assert est.regret_loss([0, 1], [2.0, 1.0], [0, 1]) == 0.0

    def test_regret_value(self):
        assert est.regret_loss([0, 0, 1], [1.0, 2.0, 3.0], [1, 0, 0]) == 2.0

    def test_regret_nonnegative(self, rng):
        space = StateSpace.k_subset(6, 2)
        states = dist.enumerate_states(space)
        for _ in range(100):
            c = rng.normal(size=6)
            z_star = states[np.argmin(states @ c)]
            z = states[rng.integers(len(states))]
            assert est.regret_loss(z, c, z_star) >= 0

    def test_regret_mismatch(self):
        with pytest.raises(ValueError):
            est.regret_loss([0, 1], [1.0], [0, 1])
