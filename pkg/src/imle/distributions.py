"""Constrained discrete exponential families ``p(z; theta) ∝ exp(<z, theta> / tau)``.

The exact routines enumerate the state space and are meant as verification
oracles on small problems.  ``marginals_pam`` is the scalable
perturb-and-MAP approximation.
"""
from __future__ import annotations

import enum
import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .noise import NoiseSpec, perturb

DEFAULT_ENUMERATION_CAP = 10**6
MAX_GRID_SIDE = 4
_PAM_BLOCK_ELEMENTS = 1 << 20

# 8-neighbor moves, same order as the Dijkstra kernels.
_GRID_MOVES = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


class IntractableEnumeration(ValueError):
    """Raised when a state space is too large to enumerate."""


class SpaceKind(str, enum.Enum):
    CATEGORICAL = "categorical"
    K_SUBSET = "k-subset"
    GRID_PATH = "grid-path"


@dataclass(frozen=True)
class StateSpace:
    """A constraint set C over binary vectors of length ``m``.

    Use the ``categorical``, ``k_subset`` and ``grid_path`` constructors.
    Grid states are row-major vertex indicators of simple 8-connected paths
    from the top-left to the bottom-right cell.
    """

    kind: SpaceKind
    m: int
    k: int = 1
    rows: int = 0
    cols: int = 0

    @classmethod
    def categorical(cls, m: int) -> StateSpace:
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        return cls(SpaceKind.CATEGORICAL, m, k=1)

    @classmethod
    def k_subset(cls, m: int, k: int) -> StateSpace:
        if not 1 <= k <= m:
            raise ValueError(f"need 1 <= k <= m, got m={m}, k={k}")
        return cls(SpaceKind.K_SUBSET, m, k=k)

    @classmethod
    def grid_path(cls, rows: int, cols: int) -> StateSpace:
        if rows < 2 or cols < 2:
            raise ValueError(f"grid needs at least 2 rows and 2 columns, got {rows}x{cols}")
        return cls(SpaceKind.GRID_PATH, rows * cols, k=0, rows=rows, cols=cols)

    def __str__(self):
        if self.kind is SpaceKind.CATEGORICAL:
            return f"Categorical({self.m})"
        if self.kind is SpaceKind.K_SUBSET:
            return f"KSubset({self.m},{self.k})"
        return f"GridPath({self.rows},{self.cols})"

    def contains(self, z) -> bool:
        """Whether ``z`` is a valid state of this space."""
        z = np.asarray(z, dtype=np.float64).ravel()
        if z.size != self.m or not np.all((z == 0) | (z == 1)):
            return False
        if self.kind is SpaceKind.CATEGORICAL:
            return z.sum() == 1
        if self.kind is SpaceKind.K_SUBSET:
            return z.sum() == self.k
        return _is_grid_path(z.reshape(self.rows, self.cols))


def _is_grid_path(mask):
    # Valid iff some simple corner-to-corner path visits exactly these cells.
    rows, cols = mask.shape
    if not (mask[0, 0] and mask[-1, -1]):
        return False
    cells = {(r, c) for r in range(rows) for c in range(cols) if mask[r, c]}
    target = (rows - 1, cols - 1)

    def dfs(u, visited):
        if u == target:
            return len(visited) == len(cells)
        for dr, dc in _GRID_MOVES:
            v = (u[0] + dr, u[1] + dc)
            if v in cells and v not in visited:
                visited.add(v)
                if dfs(v, visited):
                    return True
                visited.discard(v)
        return False

    return dfs((0, 0), {(0, 0)})


def count_states(space: StateSpace) -> int | None:
    """|C| when known in closed form, else None."""
    if space.kind is SpaceKind.CATEGORICAL:
        return space.m
    if space.kind is SpaceKind.K_SUBSET:
        return math.comb(space.m, space.k)
    return None


def enumerate_states(space: StateSpace, cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """All states of ``space`` as a read-only (n, m) float array.

    Rows are in descending lexicographic order of the bit vectors, which for
    categorical and k-subset spaces is the order of
    ``itertools.combinations`` over the positions of the ones.
    """
    n = count_states(space)
    if n is not None and n > cap:
        raise IntractableEnumeration(f"{space} has {n} states, above the cap of {cap}")
    if space.kind is SpaceKind.GRID_PATH and max(space.rows, space.cols) > MAX_GRID_SIDE:
        raise IntractableEnumeration(
            f"{space}: path enumeration is limited to grids up to {MAX_GRID_SIDE}x{MAX_GRID_SIDE}"
        )
    states = _enumerate_cached(space)
    if states.shape[0] > cap:
        raise IntractableEnumeration(f"{space} has {states.shape[0]} states, above the cap of {cap}")
    return states


@functools.lru_cache(maxsize=64)
def _enumerate_cached(space):
    if space.kind is SpaceKind.GRID_PATH:
        states = _grid_path_states(space.rows, space.cols)
    else:
        combos = list(itertools.combinations(range(space.m), space.k))
        states = np.zeros((len(combos), space.m))
        rows = np.repeat(np.arange(len(combos)), space.k)
        states[rows, np.asarray(combos).ravel()] = 1.0
    states.setflags(write=False)
    return states


def _grid_path_states(rows, cols):
    n = rows * cols
    masks = set()

    def dfs(r, c, visited):
        if r == rows - 1 and c == cols - 1:
            masks.add(visited)
            return
        for dr, dc in _GRID_MOVES:
            rr, cc = r + dr, c + dc
            if 0 <= rr < rows and 0 <= cc < cols:
                bit = 1 << (rr * cols + cc)
                if not visited & bit:
                    dfs(rr, cc, visited | bit)

    dfs(0, 0, 1)
    # Bit i of the mask is cell i; descending lexicographic order over the
    # vector (cell 0 first) is descending order of the bit-reversed integer.
    def key(mask):
        return tuple((mask >> i) & 1 for i in range(n))

    ordered = sorted(masks, key=key, reverse=True)
    states = np.array([[(mask >> i) & 1 for i in range(n)] for mask in ordered], dtype=np.float64)
    return states


def _check_theta(space, theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (space.m,):
        raise ValueError(f"theta must have shape ({space.m},), got {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    return theta


def _check_tau(tau):
    if not (tau > 0 and math.isfinite(tau)):
        raise ValueError(f"tau must be positive and finite, got {tau}")


def _log_weights(space, theta, tau):
    theta = _check_theta(space, theta)
    _check_tau(tau)
    states = enumerate_states(space)
    return states, states @ theta / tau


def _logsumexp(x):
    top = x.max()
    return float(top + np.log(np.exp(x - top).sum()))


def log_partition(space: StateSpace, theta, tau: float = 1.0) -> float:
    """A(theta) = log sum_{z in C} exp(<z, theta> / tau)."""
    _, logw = _log_weights(space, theta, tau)
    return _logsumexp(logw)


def probabilities(space: StateSpace, theta, tau: float = 1.0) -> np.ndarray:
    """pmf of every enumerated state, aligned with ``enumerate_states``."""
    _, logw = _log_weights(space, theta, tau)
    w = np.exp(logw - logw.max())
    return w / w.sum()


def pmf(space: StateSpace, z, theta, tau: float = 1.0) -> float:
    """Probability of ``z``; exactly 0 when ``z`` violates the constraints."""
    z = np.asarray(z, dtype=np.float64).ravel()
    if not space.contains(z):
        return 0.0
    theta = _check_theta(space, theta)
    return float(np.exp(z @ theta / tau - log_partition(space, theta, tau)))


def marginals_exact(space: StateSpace, theta, tau: float = 1.0) -> np.ndarray:
    """mu(theta) = E[z] under p(z; theta), by enumeration."""
    return probabilities(space, theta, tau) @ enumerate_states(space)


def sample_exact(space: StateSpace, theta, tau: float, rng: np.random.Generator, size=None):
    """Faithful samples by inverse CDF over the enumeration order.

    Returns one state, or an array of ``size`` states stacked along axis 0.
    """
    states = enumerate_states(space)
    cdf = np.cumsum(probabilities(space, theta, tau))
    u = rng.random(size) * cdf[-1]
    idx = np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)
    return states[idx].copy()


def marginals_pam(
    space: StateSpace,
    theta,
    tau_model: float,
    noise: NoiseSpec,
    n_samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Perturb-and-MAP estimate (1/S) sum_i MAP(theta + eps_i).

    ``tau_model`` only rescales theta (``<z, theta/tau>`` has the same argmax
    as ``<z, theta>``); noise scale comes from ``noise.tau``.
    """
    from .solvers import map_batch

    theta = _check_theta(space, theta)
    _check_tau(tau_model)
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    acc = np.zeros(space.m)
    scaled = theta / tau_model
    block = max(1, _PAM_BLOCK_ELEMENTS // space.m)
    for lo in range(0, n_samples, block):
        tiled = np.broadcast_to(scaled, (min(block, n_samples - lo), space.m))
        acc += map_batch(space, tiled + perturb(tiled, noise, rng)).sum(axis=0)
    return acc / n_samples
