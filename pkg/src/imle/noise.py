"""Perturbation distributions for perturb-and-MAP.

Three families are supported: a point mass at zero, Gumbel(0, tau), and the
Sum-of-Gamma family

    SoG(kappa, tau, s) = (tau / kappa) * (sum_{i=1..s} Gamma(1/kappa, kappa/i) - log s)

whose kappa-fold i.i.d. sum approaches Gumbel(0, tau) as s grows.  Every
sampler takes an explicit ``numpy.random.Generator``; nothing touches global
random state.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.57721566490153286061

DEFAULT_SOG_TRUNCATION = 10
_SOG_BLOCK_ELEMENTS = 1 << 22


class NoiseKind(str, enum.Enum):
    DIRAC = "dirac"
    GUMBEL = "gumbel"
    SOG = "sog"


@dataclass(frozen=True)
class NoiseSpec:
    """Perturbation distribution.

    ``kappa`` and ``s`` are only read for Sum-of-Gamma noise; ``tau`` is
    ignored for the point mass.
    """

    kind: NoiseKind = NoiseKind.DIRAC
    tau: float = 1.0
    kappa: int = 1
    s: int = DEFAULT_SOG_TRUNCATION

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if self.kind is NoiseKind.DIRAC:
            return
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if self.kind is NoiseKind.SOG:
            _check_positive_int("kappa", self.kappa)
            _check_positive_int("s", self.s)

    @classmethod
    def dirac(cls) -> NoiseSpec:
        return cls(NoiseKind.DIRAC)

    @classmethod
    def gumbel(cls, tau: float = 1.0) -> NoiseSpec:
        return cls(NoiseKind.GUMBEL, tau=tau)

    @classmethod
    def sog(cls, kappa: int, tau: float = 1.0, s: int = DEFAULT_SOG_TRUNCATION) -> NoiseSpec:
        return cls(NoiseKind.SOG, tau=tau, kappa=kappa, s=s)

    def __str__(self):
        if self.kind is NoiseKind.DIRAC:
            return "dirac"
        if self.kind is NoiseKind.GUMBEL:
            return f"gumbel(tau={self.tau:g})"
        return f"sog(kappa={self.kappa},tau={self.tau:g},s={self.s})"


def _check_positive_int(name, value):
    if isinstance(value, bool) or int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")


def _check_positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


def uniform_open(rng: np.random.Generator, size=None):
    """Uniform draws on the open interval (0, 1)."""
    # rng.random is [0, 1); lift an exact 0 to the smallest normal double.
    return np.maximum(rng.random(size), np.finfo(np.float64).tiny)


def sample_gumbel(tau: float, rng: np.random.Generator, size=None):
    """Gumbel(0, tau) by inversion: ``-tau * log(-log U)``."""
    _check_positive("tau", tau)
    return -tau * np.log(-np.log(uniform_open(rng, size)))


def sample_gamma(shape: float, scale, rng: np.random.Generator, size=None):
    """Gamma(shape, scale) draws, shape-scale parameterization.

    Shapes below one are supported (numpy's sampler boosts a shape+1 draw by
    ``U ** (1/shape)``).  ``scale`` may be an array that broadcasts against
    ``size``.
    """
    _check_positive("shape", shape)
    scale_arr = np.asarray(scale, dtype=np.float64)
    if np.any(~(scale_arr > 0)) or not np.all(np.isfinite(scale_arr)):
        raise ValueError(f"scale must be positive and finite, got {scale!r}")
    return rng.gamma(shape, scale_arr, size=size)


def sample_sog(kappa: int, tau: float, s: int, rng: np.random.Generator, size=None):
    """Draw from SoG(kappa, tau, s).

    With ``size=None`` a scalar is returned; otherwise an array of that shape.
    """
    _check_positive_int("kappa", kappa)
    _check_positive("tau", tau)
    _check_positive_int("s", s)
    out_shape = () if size is None else (tuple(size) if np.iterable(size) else (size,))
    n = math.prod(out_shape)
    total = np.zeros(out_shape)
    # Accumulate over blocks of series terms to bound memory for large s.
    block = max(1, min(s, _SOG_BLOCK_ELEMENTS // max(n, 1)))
    for lo in range(1, s + 1, block):
        hi = min(s, lo + block - 1)
        scales = kappa / np.arange(lo, hi + 1, dtype=np.float64)
        total += sample_gamma(1.0 / kappa, scales, rng, size=out_shape + (hi - lo + 1,)).sum(axis=-1)
    draws = (tau / kappa) * (total - math.log(s))
    return float(draws) if size is None else draws


def harmonic(s: int) -> float:
    return math.fsum(1.0 / i for i in range(1, s + 1))


def sog_mean(kappa: int, tau: float, s: int) -> float:
    """Mean of a single SoG(kappa, tau, s) draw: (tau/kappa)(H_s - log s)."""
    return tau / kappa * (harmonic(s) - math.log(s))


def sog_variance(kappa: int, tau: float, s: int) -> float:
    """Variance of a single SoG(kappa, tau, s) draw: (tau^2/kappa) sum i^-2."""
    return tau * tau / kappa * math.fsum(1.0 / (i * i) for i in range(1, s + 1))


def sog_mean_bias(s: int, tau: float = 1.0) -> float:
    """Mean of the kappa-fold SoG sum minus the Gumbel(0, tau) mean.

    Equals ``tau * (H_s - log s - gamma)``; lies strictly inside
    ``(tau / (2(s+1)), tau / (2s))``.
    """
    _check_positive_int("s", s)
    _check_positive("tau", tau)
    return tau * (harmonic(s) - math.log(s) - EULER_GAMMA)


def gumbel_mean(tau: float) -> float:
    return tau * EULER_GAMMA


def gumbel_variance(tau: float) -> float:
    return math.pi ** 2 * tau ** 2 / 6.0


def perturb(theta, spec: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """One i.i.d. noise draw per coordinate of ``theta``.

    The caller adds the result to ``theta``.  The point mass consumes no
    random numbers.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    if spec.kind is NoiseKind.DIRAC:
        return np.zeros_like(theta)
    if spec.kind is NoiseKind.GUMBEL:
        return sample_gumbel(spec.tau, rng, size=theta.shape)
    return sample_sog(spec.kappa, spec.tau, spec.s, rng, size=theta.shape)
