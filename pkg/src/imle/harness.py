"""Training loops for the synthetic experiments.

Two settings:

* an unconditional 5-of-10 subset problem with loss
  ``L(theta) = E_{z ~ p(z; theta)} ||z - b||^2``, evaluated exactly by
  enumeration while an estimator drives SGD-with-momentum updates;
* conditional shortest-path learning on synthetic cost grids with a per-cell
  linear cost model.

Every run draws from its own generator seeded by ``(seed, cell, run)`` so
that results do not depend on scheduling or worker count.
"""
from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import distributions as dist
from . import estimators as est
from .estimators import EstimatorKind, EstimatorSpec, TargetRule
from .noise import NoiseKind, NoiseSpec
from .solvers import map_grid_path

DEFAULT_LAMBDAS = (1.0, 3.0, 10.0, 30.0, 100.0)
DEFAULT_LRS = (0.01, 0.03, 0.1, 0.3, 1.0)
HIDDEN_BIAS = 1.0


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    steps: int = 50
    runs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.steps < 0 or self.runs < 1:
            raise ValueError("steps must be >= 0 and runs >= 1")


@dataclass
class RunTrace:
    losses: np.ndarray
    metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @property
    def final(self) -> float:
        return float(self.losses[-1]) if len(self.losses) else float(self.metrics.get("initial_loss", math.nan))


def run_rng(seed: int, cell: int = 0, run: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, cell, run]))


def sgd_step(params, grad, velocity, cfg: SgdConfig):
    """Heavy-ball update: ``v <- momentum * v + grad``; ``params <- params - lr * v``."""
    velocity = cfg.momentum * velocity + grad
    return params - cfg.learning_rate * velocity, velocity


# ---------------------------------------------------------------------------
# Unconditional top-k problem


@dataclass(frozen=True)
class ToyProblem:
    b: tuple
    estimator: EstimatorSpec
    k: int = 5

    @property
    def m(self) -> int:
        return len(self.b)

    @property
    def space(self) -> dist.StateSpace:
        return dist.StateSpace.k_subset(self.m, self.k)

    @classmethod
    def from_seed(cls, seed: int, estimator: EstimatorSpec, m: int = 10, k: int = 5) -> ToyProblem:
        """Draw the target vector ``b`` once from N(0, I)."""
        b = np.random.default_rng(np.random.SeedSequence([seed, 0xB])).standard_normal(m)
        return cls(tuple(float(x) for x in b), estimator, k)

    def with_estimator(self, estimator: EstimatorSpec) -> ToyProblem:
        return replace(self, estimator=estimator)


class ToyLoss:
    """Exact ``L(theta)`` and its gradient by enumeration."""

    def __init__(self, problem: ToyProblem):
        self.space = problem.space
        self.b = np.asarray(problem.b)
        self.states = dist.enumerate_states(self.space)
        self.state_losses = ((self.states - self.b) ** 2).sum(axis=1)

    def __call__(self, theta) -> float:
        return float(dist.probabilities(self.space, theta) @ self.state_losses)

    def gradient(self, theta) -> np.ndarray:
        p = dist.probabilities(self.space, theta)
        mu = p @ self.states
        return (p * self.state_losses) @ (self.states - mu)

    def sample_loss(self, z) -> float:
        return float(((z - self.b) ** 2).sum())

    def dl_dz(self, z) -> np.ndarray:
        return 2.0 * (z - self.b)


def toy_gradient(problem: ToyProblem, loss: ToyLoss, theta, rng) -> np.ndarray:
    spec = problem.estimator
    space = loss.space
    if spec.kind is EstimatorKind.IMLE:
        return est.imle_gradient(space, theta, spec.noise, spec.samples, spec.target, loss.dl_dz, rng).values
    if spec.kind is EstimatorKind.STE:
        grads = [est.ste_gradient(space, theta, spec.noise, loss.dl_dz, rng).values for _ in range(spec.samples)]
        return np.mean(grads, axis=0)
    if spec.kind is EstimatorKind.SFE:
        return est.sfe_gradient(space, theta, 1.0, loss.sample_loss, spec.samples, rng)
    return loss.gradient(theta)


def _toy_single(problem: ToyProblem, cfg: SgdConfig, cell: int, run: int) -> RunTrace:
    start = time.perf_counter()
    rng = run_rng(cfg.seed, cell, run)
    loss = ToyLoss(problem)
    theta = np.zeros(problem.m)
    velocity = np.zeros(problem.m)
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        grad = toy_gradient(problem, loss, theta, rng)
        theta, velocity = sgd_step(theta, grad, velocity, cfg)
        losses[step] = loss(theta)
    return RunTrace(
        losses,
        {"initial_loss": loss(np.zeros(problem.m)), "theta": theta},
        time.perf_counter() - start,
    )


def _map_jobs(fn, argsets, jobs):
    if jobs <= 1 or len(argsets) <= 1:
        return [fn(*a) for a in argsets]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*argsets)))


def run_toy(problem: ToyProblem, cfg: SgdConfig, cell: int = 0, jobs: int = 1) -> list[RunTrace]:
    """``cfg.runs`` independent optimizations from ``theta = 0``.

    Each trace holds the exact loss after every step.
    """
    return _map_jobs(_toy_single, [(problem, cfg, cell, r) for r in range(cfg.runs)], jobs)


def summarize(traces) -> tuple[float, float]:
    finals = np.array([t.final for t in traces])
    return float(finals.mean()), float(finals.std())


@dataclass
class SensitivityResult:
    lambdas: tuple
    lrs: tuple
    mean: dict  # noise label -> (len(lambdas), len(lrs)) array
    std: dict

    def difference(self, first: str, second: str) -> np.ndarray:
        """Mean final loss of ``first`` minus ``second``; negative favors ``first``."""
        return self.mean[first] - self.mean[second]

    def fraction_better(self, first: str, second: str) -> float:
        return float(np.mean(self.difference(first, second) < 0))


def run_sensitivity_grid(
    problem: ToyProblem,
    lambdas,
    lrs,
    cfg: SgdConfig,
    noises: dict | None = None,
    jobs: int = 1,
) -> SensitivityResult:
    """Final-loss statistics of I-MLE over a (lambda, learning rate) grid.

    ``noises`` maps a label to a noise spec; by default the problem's own
    I-MLE noise is compared against Gumbel(0, 1).  Both arms share seeds cell
    by cell.
    """
    if noises is None:
        noises = {"sog": problem.estimator.noise, "gumbel": NoiseSpec.gumbel(1.0)}
    lambdas, lrs = tuple(lambdas), tuple(lrs)
    argsets, keys = [], []
    for label, noise in noises.items():
        for i, lam in enumerate(lambdas):
            for j, lr in enumerate(lrs):
                spec = EstimatorSpec(EstimatorKind.IMLE, noise, problem.estimator.samples, TargetRule.pid(lam))
                cell = i * len(lrs) + j
                for r in range(cfg.runs):
                    argsets.append((problem.with_estimator(spec), replace(cfg, learning_rate=lr), cell, r))
                    keys.append((label, i, j))
    traces = _map_jobs(_toy_single, argsets, jobs)
    finals = {}
    for key, trace in zip(keys, traces):
        finals.setdefault(key, []).append(trace.final)
    mean = {lab: np.zeros((len(lambdas), len(lrs))) for lab in noises}
    std = {lab: np.zeros((len(lambdas), len(lrs))) for lab in noises}
    for (lab, i, j), vals in finals.items():
        mean[lab][i, j] = np.mean(vals)
        std[lab][i, j] = np.std(vals)
    return SensitivityResult(lambdas, lrs, mean, std)


def tune_toy(problem: ToyProblem, cfg: SgdConfig, lrs=DEFAULT_LRS, lambdas=DEFAULT_LAMBDAS, jobs: int = 1):
    """Pick the hyperparameters with the lowest mean final loss.

    Lambda is only searched for I-MLE.  Returns ``(best_spec, best_lr, mean, std)``.
    """
    spec = problem.estimator
    lam_grid = lambdas if spec.kind is EstimatorKind.IMLE else (None,)
    best = None
    for i, lam in enumerate(lam_grid):
        cand = spec if lam is None else replace(spec, target=TargetRule.pid(lam))
        for j, lr in enumerate(lrs):
            traces = run_toy(problem.with_estimator(cand), replace(cfg, learning_rate=lr), cell=i * len(lrs) + j, jobs=jobs)
            mean, std = summarize(traces)
            if best is None or mean < best[2]:
                best = (cand, lr, mean, std)
    return best


# ---------------------------------------------------------------------------
# Shortest paths on synthetic grids


@dataclass
class PathDataset:
    features: np.ndarray  # (n, K, K, d)
    true_costs: np.ndarray  # (n, K, K)
    y_star: np.ndarray  # (n, K*K)
    hidden_weights: np.ndarray
    hidden_bias: float

    @property
    def K(self) -> int:
        return self.true_costs.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[-1]

    def __len__(self):
        return self.true_costs.shape[0]

    def subset(self, idx) -> PathDataset:
        return PathDataset(self.features[idx], self.true_costs[idx], self.y_star[idx], self.hidden_weights, self.hidden_bias)


@dataclass
class LinearModel:
    """Per-cell cost prediction ``<weights, x> + bias``; ``theta = -cost``."""

    weights: np.ndarray
    bias: float = 0.0

    def costs(self, features) -> np.ndarray:
        return features @ self.weights + self.bias

    def theta(self, features) -> np.ndarray:
        return -self.costs(features).reshape(-1)

    def copy(self) -> LinearModel:
        return LinearModel(self.weights.copy(), float(self.bias))


def softplus(x):
    return np.logaddexp(0.0, x)


def gen_path_dataset(K: int, n_examples: int, d: int, seed: int) -> PathDataset:
    """Gaussian cell features, softplus-linear true costs, solver-labelled paths.

    The hidden model has a uniformly random unit weight vector and bias
    ``HIDDEN_BIAS``, so the pre-activation of every cell is N(HIDDEN_BIAS, 1).
    """
    if K < 2 or d < 1 or n_examples < 1:
        raise ValueError("need K >= 2, d >= 1, n_examples >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    w_star = rng.standard_normal(d)
    w_star /= np.linalg.norm(w_star)
    b_star = HIDDEN_BIAS
    features = rng.standard_normal((n_examples, K, K, d))
    costs = softplus(features @ w_star + b_star)
    y_star = np.stack([map_grid_path(c).state for c in costs])
    return PathDataset(features, costs, y_star, w_star, b_star)


def init_model(d: int, seed: int) -> LinearModel:
    """Random direction, positive bias so that most initial costs are above the clamp floor."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x30DE1]))
    return LinearModel(0.1 * rng.standard_normal(d) / math.sqrt(d), HIDDEN_BIAS)


def predict_paths(model: LinearModel, dataset: PathDataset) -> np.ndarray:
    return np.stack([map_grid_path(model.costs(x)).state for x in dataset.features])


def path_accuracy(model: LinearModel, dataset: PathDataset, rtol: float = 1e-9) -> float:
    """Fraction of examples whose predicted path has optimal true cost."""
    pred = predict_paths(model, dataset)
    return optimal_cost_fraction(pred, dataset, rtol)


def optimal_cost_fraction(paths, dataset: PathDataset, rtol: float = 1e-9) -> float:
    flat_costs = dataset.true_costs.reshape(len(dataset), -1)
    got = (np.asarray(paths) * flat_costs).sum(axis=1)
    best = (dataset.y_star * flat_costs).sum(axis=1)
    return float(np.mean(np.isclose(got, best, rtol=rtol, atol=0.0)))


class PathLoss(str, enum.Enum):
    HAMMING = "hamming"
    REGRET = "regret"


def path_theta_gradient(space, spec: EstimatorSpec, loss, theta, true_costs, y, rng):
    """Estimate of dL/dtheta for one grid example, plus the forward sample.

    ``true_costs`` are read only by the regret loss and ``y`` only by the
    Hamming loss.
    """
    loss = PathLoss(loss)
    if loss == PathLoss.HAMMING:
        dl_dz = est.hamming_grad(y)
    elif loss == PathLoss.REGRET:
        dl_dz = est.regret_grad(true_costs)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    if spec.kind is EstimatorKind.IMLE:
        total = np.zeros_like(theta)
        z_first = None
        for _ in range(spec.samples):
            z_hat, eps = est.imle_forward(space, theta, spec.noise, rng)
            total += est.imle_backward(space, theta, eps, z_hat, dl_dz, spec.target).values
            z_first = z_hat if z_first is None else z_first
        return total / spec.samples, z_first
    if spec.kind is EstimatorKind.STE:
        g = est.ste_gradient(space, theta, spec.noise, lambda z: dl_dz, rng)
        return g.values, g.samples[0]
    raise ValueError(f"estimator {spec.kind.value} is not supported for path learning")


def _example_loss(loss, z, costs, y):
    if loss == PathLoss.HAMMING:
        return est.hamming_loss(z, y)
    return est.regret_loss(z, costs, y)


def train_path_model(
    dataset: PathDataset,
    spec: EstimatorSpec,
    loss,
    cfg: SgdConfig,
    model: LinearModel | None = None,
    batch_size: int = 10,
) -> tuple[LinearModel, RunTrace]:
    """Mini-batch SGD on the linear cost model, ``cfg.steps`` epochs.

    The theta-gradient estimate is pulled back through ``theta = -(X w + b)``.
    The trace records mean training loss per epoch; ``metrics['accuracy']``
    holds per-epoch path-optimality accuracy and ``metrics['baseline']`` the
    untrained accuracy.
    """
    start = time.perf_counter()
    loss = PathLoss(loss)
    rng = run_rng(cfg.seed, 0, 0)
    space = dist.StateSpace.grid_path(dataset.K, dataset.K)
    model = init_model(dataset.d, cfg.seed) if model is None else model.copy()
    n = len(dataset)
    flat_x = dataset.features.reshape(n, -1, dataset.d)
    flat_c = dataset.true_costs.reshape(n, -1)
    params = np.append(model.weights, model.bias)
    velocity = np.zeros_like(params)
    baseline = path_accuracy(model, dataset)
    losses, accuracy = [], []
    for _ in range(cfg.steps):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, batch_size):
            grad = np.zeros_like(params)
            batch = order[lo:lo + batch_size]
            for i in batch:
                x = flat_x[i]
                theta = -(x @ params[:-1] + params[-1])
                g_theta, z_hat = path_theta_gradient(space, spec, loss, theta, flat_c[i], dataset.y_star[i], rng)
                # theta = -(x w + b): dtheta/dw = -x, dtheta/db = -1
                grad[:-1] -= x.T @ g_theta
                grad[-1] -= g_theta.sum()
                epoch_loss += _example_loss(loss, z_hat, flat_c[i], dataset.y_star[i])
            params, velocity = sgd_step(params, grad / len(batch), velocity, cfg)
        model = LinearModel(params[:-1].copy(), float(params[-1]))
        losses.append(epoch_loss / n)
        accuracy.append(path_accuracy(model, dataset))
    trace = RunTrace(
        np.asarray(losses),
        {"accuracy": np.asarray(accuracy), "baseline": baseline},
        time.perf_counter() - start,
    )
    return model, trace


def mean_path_length(dataset: PathDataset) -> float:
    return float(dataset.y_star.sum(axis=1).mean())


def default_path_estimators(dataset: PathDataset, lam: float = 20.0) -> dict:
    """The three I-MLE configurations compared on grid paths.

    ``mu-mu``: regret + CO target + SoG(k, 1, 10), k the mean path length.
    ``M-M``: Hamming + CO target + no noise (perceptron rule).
    ``BB``: Hamming + PID target + no noise.
    """
    kappa = max(1, int(round(mean_path_length(dataset))))
    return {
        "mu-mu": (EstimatorSpec(EstimatorKind.IMLE, NoiseSpec.sog(kappa, 1.0, 10), 1, TargetRule.co()), PathLoss.REGRET),
        "M-M": (EstimatorSpec(EstimatorKind.IMLE, NoiseSpec.dirac(), 1, TargetRule.co()), PathLoss.HAMMING),
        "BB": (EstimatorSpec(EstimatorKind.IMLE, NoiseSpec.dirac(), 1, TargetRule.pid(lam)), PathLoss.HAMMING),
    }


__all__ = [
    "DEFAULT_LAMBDAS",
    "DEFAULT_LRS",
    "LinearModel",
    "NoiseKind",
    "PathDataset",
    "PathLoss",
    "RunTrace",
    "SensitivityResult",
    "SgdConfig",
    "ToyLoss",
    "ToyProblem",
    "default_path_estimators",
    "gen_path_dataset",
    "path_accuracy",
    "run_sensitivity_grid",
    "run_toy",
    "sgd_step",
    "train_path_model",
    "tune_toy",
]
