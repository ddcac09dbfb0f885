"""Implicit maximum-likelihood gradient estimation for discrete distributions.

Submodules
----------
noise
    Gumbel and Sum-of-Gamma perturbations.
distributions
    State spaces and exact (enumeration) oracles; perturb-and-MAP marginals.
solvers
    MAP oracles for categorical, k-subset and grid-path spaces.
estimators
    I-MLE, straight-through, score-function and exact-MLE gradients; losses.
harness
    SGD loops for the synthetic top-k and shortest-path experiments.
cli
    ``imle`` command-line interface.
"""
__version__ = "0.1.0"

from ._backend import BACKEND
from .distributions import IntractableEnumeration, StateSpace
from .estimators import EstimatorKind, EstimatorSpec, TargetRule
from .noise import NoiseSpec
from .solvers import MapResult, map_state

__all__ = [
    "BACKEND",
    "EstimatorKind",
    "EstimatorSpec",
    "IntractableEnumeration",
    "MapResult",
    "NoiseSpec",
    "StateSpace",
    "TargetRule",
    "map_state",
]
