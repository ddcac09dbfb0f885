"""MAP oracles: ``argmax_{z in C} <z, theta>`` for each state space kind.

Ties are broken towards the lowest index (categorical, top-k) or by the
fixed neighbor order and insertion-stable queue of the grid Dijkstra.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .distributions import SpaceKind, StateSpace

DEFAULT_COST_FLOOR = 1e-6


@dataclass(frozen=True)
class MapResult:
    state: np.ndarray
    weight: float


def _as_theta(theta):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.size == 0:
        raise ValueError("theta must be a non-empty vector")
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta must be finite")
    return theta


def _result(state, theta):
    state = state.astype(np.float64)
    return MapResult(state, float(state @ theta))


def map_categorical(theta) -> MapResult:
    theta = _as_theta(theta)
    state = np.zeros_like(theta)
    state[int(np.argmax(theta))] = 1.0  # argmax returns the first maximum
    return _result(state, theta)


def map_k_subset(theta, k: int) -> MapResult:
    """Indicator of the k largest coordinates."""
    theta = _as_theta(theta)
    if not 1 <= k <= theta.size:
        raise ValueError(f"k must lie in [1, {theta.size}], got {k}")
    return _result(_backend.topk_mask(theta, int(k)), theta)


def map_grid_path(costs, floor: float = DEFAULT_COST_FLOOR) -> MapResult:
    """Minimum-cost top-left to bottom-right path over cell costs.

    Costs are clamped below at ``floor`` before the search (Dijkstra needs
    nonnegative weights).  The returned weight is ``-sum`` of the *unclamped*
    costs along the path, i.e. ``<z, theta>`` with ``theta = -costs``.
    """
    costs = np.asarray(costs, dtype=np.float64)
    if costs.ndim != 2 or min(costs.shape) < 2:
        raise ValueError(f"costs must be a matrix with at least 2 rows and columns, got shape {costs.shape}")
    if not np.all(np.isfinite(costs)):
        raise ValueError("costs must be finite")
    mask = _backend.dijkstra_grid(np.maximum(costs, floor))
    return _result(mask.ravel(), -costs.ravel())


def map_state(space: StateSpace, theta, floor: float = DEFAULT_COST_FLOOR) -> MapResult:
    """Dispatch to the solver matching ``space``."""
    theta = _as_theta(theta)
    if theta.size != space.m:
        raise ValueError(f"theta has length {theta.size}, space expects {space.m}")
    if space.kind is SpaceKind.CATEGORICAL:
        return map_categorical(theta)
    if space.kind is SpaceKind.K_SUBSET:
        return map_k_subset(theta, space.k)
    return map_grid_path(-theta.reshape(space.rows, space.cols), floor=floor)


def map_batch(space: StateSpace, thetas, floor: float = DEFAULT_COST_FLOOR) -> np.ndarray:
    """MAP states for each row of ``thetas``; returns an (n, m) array.

    Categorical and top-k rows are solved in one vectorized pass with the
    same lowest-index tie rule as the single-vector solvers.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    if thetas.ndim != 2 or thetas.shape[1] != space.m:
        raise ValueError(f"thetas must have shape (n, {space.m}), got {thetas.shape}")
    if not np.all(np.isfinite(thetas)):
        raise ValueError("theta must be finite")
    if space.kind is SpaceKind.GRID_PATH:
        return np.stack([map_state(space, t, floor).state for t in thetas])
    out = np.zeros_like(thetas)
    rows = np.arange(len(thetas))[:, None]
    if space.kind is SpaceKind.CATEGORICAL:
        out[rows[:, 0], np.argmax(thetas, axis=1)] = 1.0
    else:
        out[rows, np.argsort(-thetas, axis=1, kind="stable")[:, : space.k]] = 1.0
    return out
