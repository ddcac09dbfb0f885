"""Gradient estimators for parameters of discrete exponential families.

The central one is implicit maximum-likelihood estimation:

    grad ~= (1/S) sum_i [MAP(theta + eps_i) - MAP(theta' + eps_i)]

where ``theta'`` comes from a target rule applied to the downstream gradient
and each ``eps_i`` is shared by both MAP calls.  The ``1/lambda`` factor of
the PID target is left to the learning rate.

Baselines: straight-through (identity Jacobian), score-function with exact
samples/marginals, and the exact marginal-difference gradient.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import distributions as dist
from .noise import NoiseSpec, perturb
from .solvers import map_state


class TargetKind(str, enum.Enum):
    PID = "pid"
    CO = "co"


@dataclass(frozen=True)
class TargetRule:
    kind: TargetKind = TargetKind.PID
    lam: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", TargetKind(self.kind))
        if self.kind is TargetKind.PID and not self.lam > 0:
            raise ValueError(f"lambda must be positive for the PID target, got {self.lam}")

    @classmethod
    def pid(cls, lam: float) -> TargetRule:
        return cls(TargetKind.PID, lam)

    @classmethod
    def co(cls) -> TargetRule:
        return cls(TargetKind.CO)

    def apply(self, theta, dl_dz):
        if self.kind is TargetKind.PID:
            return pid_target(theta, dl_dz, self.lam)
        return co_target(theta, dl_dz)


class EstimatorKind(str, enum.Enum):
    IMLE = "imle"
    STE = "ste"
    SFE = "sfe"
    EXACT = "exact"


@dataclass(frozen=True)
class EstimatorSpec:
    kind: EstimatorKind = EstimatorKind.IMLE
    noise: NoiseSpec = field(default_factory=NoiseSpec.dirac)
    samples: int = 1
    target: TargetRule = field(default_factory=TargetRule.co)

    def __post_init__(self):
        object.__setattr__(self, "kind", EstimatorKind(self.kind))
        if self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")


@dataclass
class GradEstimate:
    values: np.ndarray
    samples: list = field(default_factory=list)


def _vec(x, name="vector"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    return x


def _same_length(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: length mismatch {a.shape} vs {b.shape}")


def pid_target(theta, dl_dz, lam: float) -> np.ndarray:
    """theta' = theta - lam * dL/dz."""
    theta, dl_dz = _vec(theta, "theta"), _vec(dl_dz, "dl_dz")
    _same_length(theta, dl_dz, "pid_target")
    return theta - lam * dl_dz


def co_target(theta, dl_dz) -> np.ndarray:
    """theta'_i = theta_i where dL/dz_i == 0, else -dL/dz_i.

    The comparison is exact; tiny nonzero gradients are treated as nonzero.
    """
    theta, dl_dz = _vec(theta, "theta"), _vec(dl_dz, "dl_dz")
    _same_length(theta, dl_dz, "co_target")
    return np.where(dl_dz == 0, theta, -dl_dz)


def imle_forward(space, theta, noise: NoiseSpec, rng: np.random.Generator):
    """Return ``(z_hat, eps)`` with ``z_hat = MAP(theta + eps)``.

    Keep ``eps`` for the backward pass.
    """
    theta = _vec(theta, "theta")
    eps = perturb(theta, noise, rng)
    return map_state(space, theta + eps).state, eps


def imle_backward(space, theta, epsilon, z_hat, dl_dz, target: TargetRule) -> GradEstimate:
    """Single-sample estimate ``z_hat - MAP(theta' + eps)`` reusing the forward noise."""
    theta, epsilon, z_hat, dl_dz = (_vec(v, n) for v, n in ((theta, "theta"), (epsilon, "epsilon"), (z_hat, "z_hat"), (dl_dz, "dl_dz")))
    for other, name in ((epsilon, "epsilon"), (z_hat, "z_hat"), (dl_dz, "dl_dz")):
        _same_length(theta, other, f"imle_backward {name}")
    if not np.all(np.isfinite(dl_dz)):
        raise ValueError("dl_dz must be finite")
    theta_prime = target.apply(theta, dl_dz)
    return GradEstimate(z_hat - map_state(space, theta_prime + epsilon).state, [z_hat])


def imle_gradient(
    space,
    theta,
    noise: NoiseSpec,
    n_samples: int,
    target: TargetRule,
    dl_dz_fn: Callable[[np.ndarray], np.ndarray],
    rng: np.random.Generator,
) -> GradEstimate:
    """Average of ``n_samples`` coupled forward/backward pairs.

    ``dl_dz_fn`` is evaluated at each forward sample.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    theta = _vec(theta, "theta")
    total = np.zeros_like(theta)
    states = []
    for _ in range(n_samples):
        z_hat, eps = imle_forward(space, theta, noise, rng)
        g = imle_backward(space, theta, eps, z_hat, dl_dz_fn(z_hat), target)
        total += g.values
        states.append(z_hat)
    return GradEstimate(total / n_samples, states)


def exact_mle_gradient(space, theta, theta_prime, tau: float = 1.0) -> np.ndarray:
    """mu(theta) - mu(theta'), from enumerated marginals."""
    return dist.marginals_exact(space, theta, tau) - dist.marginals_exact(space, theta_prime, tau)


def mle_objective(space, theta, theta_prime, tau: float = 1.0) -> float:
    """Expected negative log-likelihood of p(.; theta) under q = p(.; theta').

    Its gradient in theta is ``exact_mle_gradient / tau``.
    """
    mu_q = dist.marginals_exact(space, theta_prime, tau)
    return dist.log_partition(space, theta, tau) - float(mu_q @ np.asarray(theta, dtype=np.float64)) / tau


def kl_divergence(space, theta_q, theta_p, tau: float = 1.0) -> float:
    """KL(q || p) for two members of the same family, by enumeration."""
    theta_q = _vec(theta_q, "theta_q")
    theta_p = _vec(theta_p, "theta_p")
    mu_q = dist.marginals_exact(space, theta_q, tau)
    return (
        float(mu_q @ (theta_q - theta_p)) / tau
        - dist.log_partition(space, theta_q, tau)
        + dist.log_partition(space, theta_p, tau)
    )


def perceptron_gradient(space, theta, data_states) -> np.ndarray:
    """MLE gradient with the model marginals replaced by the MAP state."""
    data_states = np.atleast_2d(np.asarray(data_states, dtype=np.float64))
    return map_state(space, theta).state - data_states.mean(axis=0)


def ste_gradient(space, theta, noise: NoiseSpec, dl_dz_fn, rng: np.random.Generator) -> GradEstimate:
    """Straight-through: the downstream gradient at ``MAP(theta + eps)``."""
    theta = _vec(theta, "theta")
    z_hat = map_state(space, theta + perturb(theta, noise, rng)).state
    return GradEstimate(np.asarray(dl_dz_fn(z_hat), dtype=np.float64), [z_hat])


def sfe_gradient(space, theta, tau: float, loss_fn, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Score-function estimate (1/S) sum loss(z_i) (z_i - mu(theta)).

    Samples are exact and ``mu`` is the exact marginal vector, so the
    estimator is unbiased for the gradient of ``E[loss]`` at ``tau = 1``
    (divide by ``tau`` otherwise).
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    mu = dist.marginals_exact(space, theta, tau)
    zs = np.atleast_2d(dist.sample_exact(space, theta, tau, rng, size=n_samples))
    losses = np.array([loss_fn(z) for z in zs], dtype=np.float64)
    return (losses[:, None] * (zs - mu)).mean(axis=0)


def hamming_loss(z, y) -> float:
    z, y = _vec(z, "z"), _vec(y, "y")
    _same_length(z, y, "hamming_loss")
    return float(np.mean(z + y - 2.0 * z * y))


def hamming_grad(y, m: int | None = None) -> np.ndarray:
    """Gradient of the normalized Hamming loss in z: (1 - 2y) / m."""
    y = _vec(y, "y")
    m = y.size if m is None else m
    if m != y.size:
        raise ValueError(f"hamming_grad: m={m} but y has length {y.size}")
    return (1.0 - 2.0 * y) / m


def regret_loss(z, c, z_star) -> float:
    """c . (z - z_star); nonnegative whenever z_star is cost-optimal."""
    z, c, z_star = _vec(z, "z"), _vec(c, "c"), _vec(z_star, "z_star")
    _same_length(z, c, "regret_loss")
    _same_length(z_star, c, "regret_loss")
    return float(c @ z - c @ z_star)


def regret_grad(c) -> np.ndarray:
    """Gradient of the regret in z, which is the cost vector itself."""
    return _vec(c, "c").copy()
