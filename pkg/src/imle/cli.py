"""Command-line entry point: ``imle --experiment NAME [options]``.

Configuration comes from a flat ``key = value`` file (``--config``) and/or
flags; flags win.  Each invocation writes CSV files plus ``manifest.ini``
into a fresh output directory.  The manifest is itself a valid config file,
so ``imle --config OUT/manifest.ini --out OUT2`` repeats the run.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, _backend
from . import distributions as dist
from . import harness as H
from . import noise as nz
from .estimators import EstimatorKind, EstimatorSpec, TargetRule
from .noise import NoiseSpec

log = logging.getLogger("imle")

EXPERIMENTS = ("toy-topk", "sensitivity", "sog-stats", "gumbel-max-check", "shortest-path", "oracle-dump")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _float_list(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _kappa(text):
    return "auto" if str(text).strip() == "auto" else int(text)


# key -> (converter, validator or None, message)
_KEYS = {
    "experiment": (str, lambda v: v in EXPERIMENTS, f"must be one of {', '.join(EXPERIMENTS)}"),
    "seed": (int, None, ""),
    "out": (str, None, ""),
    "jobs": (int, lambda v: v >= 1, "must be >= 1"),
    "lambda": (float, lambda v: v > 0 and math.isfinite(v), "must be > 0"),
    "lr": (float, lambda v: v >= 0 and math.isfinite(v), "must be >= 0"),
    "momentum": (float, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    "tau": (float, lambda v: v > 0 and math.isfinite(v), "must be > 0"),
    "kappa": (_kappa, lambda v: v == "auto" or v >= 1, "must be a positive integer or 'auto'"),
    "s": (int, lambda v: v >= 1, "must be >= 1"),
    "samples": (int, lambda v: v >= 1, "must be >= 1"),
    "k": (int, lambda v: v >= 1, "must be >= 1"),
    "m": (int, lambda v: v >= 1, "must be >= 1"),
    "grid_size": (int, lambda v: v >= 2, "must be >= 2"),
    "runs": (int, lambda v: v >= 1, "must be >= 1"),
    "steps": (int, lambda v: v >= 0, "must be >= 0"),
    "estimator": (str, lambda v: v in [e.value for e in EstimatorKind], "must be one of imle, ste, sfe, exact"),
    "noise": (str, lambda v: v in [e.value for e in nz.NoiseKind], "must be one of dirac, gumbel, sog"),
    "target": (str, lambda v: v in ("pid", "co"), "must be pid or co"),
    "loss": (str, lambda v: v in ("hamming", "regret"), "must be hamming or regret"),
    "lambdas": (_float_list, lambda v: len(v) > 0 and all(x > 0 for x in v), "must be a non-empty list of positive numbers"),
    "lrs": (_float_list, lambda v: len(v) > 0 and all(x >= 0 for x in v), "must be a non-empty list of numbers >= 0"),
    "n_examples": (int, lambda v: v >= 1, "must be >= 1"),
    "features": (int, lambda v: v >= 1, "must be >= 1"),
    "batch_size": (int, lambda v: v >= 1, "must be >= 1"),
    "space": (str, lambda v: v in [e.value for e in dist.SpaceKind], "must be categorical, k-subset or grid-path"),
    "tune": (_bool, None, ""),
    "bins": (int, lambda v: v >= 1, "must be >= 1"),
}

_COMMON = {"seed": 0, "jobs": 1}

DEFAULTS = {
    "toy-topk": {
        "m": 10, "k": 5, "estimator": "imle", "noise": "sog", "kappa": 1, "tau": 5.0, "s": 10,
        "target": "pid", "lambda": 10.0, "lr": 0.1, "momentum": 0.9, "steps": 50, "runs": 100,
        "samples": 1, "tune": False, "lambdas": H.DEFAULT_LAMBDAS, "lrs": H.DEFAULT_LRS,
    },
    "sensitivity": {
        "m": 10, "k": 5, "kappa": 1, "tau": 5.0, "s": 10, "momentum": 0.9, "steps": 50, "runs": 100,
        "samples": 1, "lambdas": H.DEFAULT_LAMBDAS, "lrs": H.DEFAULT_LRS,
    },
    "sog-stats": {"kappa": 5, "tau": 1.0, "s": 10, "samples": 100_000, "bins": 50},
    "gumbel-max-check": {"m": 5, "tau": 1.0, "samples": 200_000},
    "shortest-path": {
        "grid_size": 8, "n_examples": 200, "features": 5, "estimator": "imle", "noise": "dirac",
        "kappa": "auto", "tau": 1.0, "s": 10, "target": "co", "lambda": 20.0, "loss": "hamming",
        "lr": 0.001, "momentum": 0.9, "steps": 50, "batch_size": 10, "samples": 1,
    },
    "oracle-dump": {"space": "k-subset", "m": 6, "k": 3, "grid_size": 3, "tau": 1.0},
}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    output_dir: Path
    jobs: int = 1
    force: bool = False
    params: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    def items(self):
        """Effective key/value pairs in manifest order."""
        yield "experiment", self.experiment
        yield "seed", self.seed
        for key in sorted(self.params):
            yield key, self.params[key]


def _normalize_key(key):
    return key.strip().replace("-", "_")


def read_config_file(path) -> dict:
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    if parser.sections() != ["config"]:
        raise ConfigError(f"malformed config file {path}: sections are not allowed")
    return {_normalize_key(k): v for k, v in parser["config"].items()}


def _convert(key, raw):
    if key not in _KEYS:
        raise ConfigError(f"unknown key {key!r}")
    conv, check, msg = _KEYS[key]
    try:
        value = conv(raw) if isinstance(raw, str) else raw
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value for {key!r}: {raw!r} ({exc})") from exc
    if check is not None and not check(value):
        raise ConfigError(f"invalid value for {key!r}: {raw!r} {msg}")
    return value


def build_config(values: dict, force: bool = False) -> ExperimentConfig:
    """Validate merged key/values and fill experiment defaults."""
    values = {_normalize_key(k): v for k, v in values.items() if v is not None}
    converted = {k: _convert(k, v) for k, v in values.items()}
    if "experiment" not in converted:
        raise ConfigError("missing required key 'experiment'")
    name = converted.pop("experiment")
    seed = converted.pop("seed", _COMMON["seed"])
    jobs = converted.pop("jobs", _COMMON["jobs"])
    out = converted.pop("out", None)
    if out is None:
        raise ConfigError("missing required key 'out' (output directory)")
    allowed = DEFAULTS[name]
    extra = sorted(set(converted) - set(allowed))
    if extra:
        raise ConfigError(f"key {extra[0]!r} does not apply to experiment {name!r}")
    params = dict(allowed)
    params.update(converted)
    _cross_validate(name, params)
    return ExperimentConfig(name, seed, Path(out), jobs, force, params)


def _cross_validate(name, p):
    if "k" in p and "m" in p and p["k"] > p["m"] and (name != "oracle-dump" or p["space"] == "k-subset"):
        raise ConfigError(f"invalid value for 'k': {p['k']} exceeds m={p['m']}")
    if name != "shortest-path" and p.get("kappa") == "auto":
        raise ConfigError("invalid value for 'kappa': 'auto' is only accepted by shortest-path")
    if name == "shortest-path" and p["estimator"] not in ("imle", "ste"):
        raise ConfigError("invalid value for 'estimator': shortest-path supports imle or ste")
    if name == "oracle-dump" and p["space"] == "grid-path" and p["grid_size"] > dist.MAX_GRID_SIDE:
        raise ConfigError(f"invalid value for 'grid_size': enumeration needs <= {dist.MAX_GRID_SIDE}")


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imle", description="I-MLE experiments and oracle checks")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--seed", type=str)
    p.add_argument("--out", help="output directory (must not exist unless --force)")
    p.add_argument("--jobs", type=str, help="worker processes for independent runs")
    p.add_argument("--force", action="store_true", help="allow writing into an existing directory")
    for flag in ("lambda", "lr", "tau", "kappa", "s", "samples", "k", "m", "grid-size", "runs", "steps",
                 "estimator", "noise", "target", "loss", "momentum", "lambdas", "lrs", "n-examples",
                 "features", "batch-size", "space", "tune", "bins"):
        p.add_argument(f"--{flag}", dest=_normalize_key(flag), type=str)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_config(argv=None) -> ExperimentConfig:
    return config_from_args(make_parser().parse_args(argv))


def config_from_args(args) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in ("config", "force", "verbose") or value is None:
            continue
        values[key] = value
    return build_config(values, force=args.force)


# ---------------------------------------------------------------------------
# Output helpers


def fmt(value):
    """Locale-free, round-trippable text for CSV and manifest values."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    if isinstance(value, (tuple, list)):
        return ",".join(fmt(v) for v in value)
    return str(value)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_manifest(cfg: ExperimentConfig, wall_clock: float):
    lines = [f"# imle {__version__}", f"# python {platform.python_version()}", f"# numpy {np.__version__}",
             f"# kernels {_backend.BACKEND}", f"# wall_clock_seconds {wall_clock:.3f}"]
    lines += [f"{key} = {fmt(value)}" for key, value in cfg.items()]
    (cfg.output_dir / "manifest.ini").write_text("\n".join(lines) + "\n")


def prepare_output(cfg: ExperimentConfig):
    out = cfg.output_dir
    if out.exists() and any(out.iterdir()) and not cfg.force:
        raise ConfigError(f"output directory {out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# Experiments


def _noise_from(p, kind=None):
    kind = kind or p["noise"]
    if kind == "dirac":
        return NoiseSpec.dirac()
    if kind == "gumbel":
        return NoiseSpec.gumbel(p["tau"])
    return NoiseSpec.sog(p["kappa"], p["tau"], p["s"])


def _target_from(p):
    return TargetRule.pid(p["lambda"]) if p["target"] == "pid" else TargetRule.co()


def run_toy_topk(cfg: ExperimentConfig):
    p = cfg.params
    spec = EstimatorSpec(p["estimator"], _noise_from(p), p["samples"], _target_from(p))
    problem = H.ToyProblem.from_seed(cfg.seed, spec, p["m"], p["k"])
    sgd = H.SgdConfig(p["lr"], p["momentum"], p["steps"], p["runs"], cfg.seed)
    if p["tune"]:
        spec, lr, _, _ = H.tune_toy(problem, sgd, p["lrs"], p["lambdas"], jobs=cfg.jobs)
        problem = problem.with_estimator(spec)
        sgd = H.SgdConfig(lr, p["momentum"], p["steps"], p["runs"], cfg.seed)
        log.info("tuned: lr=%s target=%s", lr, spec.target)
    # Tuning scans cells 0..N-1; the reported runs use a disjoint cell index.
    traces = H.run_toy(problem, sgd, cell=10_000, jobs=cfg.jobs)
    for r, trace in enumerate(traces):
        write_csv(cfg.output_dir / f"trace_run{r}.csv", ["step", "loss"],
                  [(i + 1, v) for i, v in enumerate(trace.losses)])
    mean, std = H.summarize(traces)
    label = spec.kind.value
    write_csv(cfg.output_dir / "summary.csv",
              ["estimator", "mean_final_L", "std_final_L", "lr", "lambda", "noise"],
              [(label, mean, std, sgd.learning_rate, spec.target.lam if spec.target.kind.value == "pid" else "",
                str(spec.noise))])
    log.info("%s: mean final L %.6f (std %.6f)", label, mean, std)


def run_sensitivity(cfg: ExperimentConfig):
    p = cfg.params
    sog = NoiseSpec.sog(p["kappa"], p["tau"], p["s"])
    spec = EstimatorSpec(EstimatorKind.IMLE, sog, p["samples"], TargetRule.pid(1.0))
    problem = H.ToyProblem.from_seed(cfg.seed, spec, p["m"], p["k"])
    sgd = H.SgdConfig(0.0, p["momentum"], p["steps"], p["runs"], cfg.seed)
    res = H.run_sensitivity_grid(problem, p["lambdas"], p["lrs"], sgd,
                                 noises={"sog": sog, "gumbel": NoiseSpec.gumbel(1.0)}, jobs=cfg.jobs)
    rows = []
    for label in ("sog", "gumbel"):
        for i, lam in enumerate(res.lambdas):
            for j, lr in enumerate(res.lrs):
                rows.append((lam, lr, res.mean[label][i, j], res.std[label][i, j], label))
    write_csv(cfg.output_dir / "grid.csv", ["lambda", "lr", "mean_final_L", "std_final_L", "noise_kind"], rows)
    diff = res.difference("sog", "gumbel")
    write_csv(cfg.output_dir / "difference.csv", ["lambda", "lr", "sog_minus_gumbel"],
              [(lam, lr, diff[i, j]) for i, lam in enumerate(res.lambdas) for j, lr in enumerate(res.lrs)])
    log.info("SoG strictly better in %.0f%% of cells", 100 * res.fraction_better("sog", "gumbel"))


def run_sog_stats(cfg: ExperimentConfig):
    p = cfg.params
    kappa, tau, s, n = p["kappa"], p["tau"], p["s"], p["samples"]
    rng = H.run_rng(cfg.seed)
    single = nz.sample_sog(kappa, tau, s, rng, size=(n, kappa))
    summed = single.sum(axis=1)
    gumbel = nz.sample_gumbel(tau, rng, size=n)
    first = single[:, 0]
    write_csv(cfg.output_dir / "moments.csv",
              ["kappa", "tau", "s", "n", "mean", "var", "analytic_mean", "analytic_var"],
              [(kappa, tau, s, n, first.mean(), first.var(ddof=1),
                nz.sog_mean(kappa, tau, s), nz.sog_variance(kappa, tau, s))])
    write_csv(cfg.output_dir / "sum_moments.csv",
              ["kappa", "tau", "s", "n", "mean", "var", "analytic_mean", "analytic_var", "gumbel_mean", "gumbel_var"],
              [(kappa, tau, s, n, summed.mean(), summed.var(ddof=1),
                kappa * nz.sog_mean(kappa, tau, s), kappa * nz.sog_variance(kappa, tau, s),
                nz.gumbel_mean(tau), nz.gumbel_variance(tau))])
    lo = min(summed.min(), gumbel.min())
    hi = max(summed.max(), gumbel.max())
    edges = np.linspace(lo, hi, p["bins"] + 1)
    h_sog, _ = np.histogram(summed, edges)
    h_gum, _ = np.histogram(gumbel, edges)
    write_csv(cfg.output_dir / "histogram.csv", ["bin_left", "bin_right", "sog_sum_count", "gumbel_count"],
              zip(edges[:-1], edges[1:], h_sog, h_gum))


def run_gumbel_max_check(cfg: ExperimentConfig):
    p = cfg.params
    rng = H.run_rng(cfg.seed)
    theta = rng.standard_normal(p["m"])
    space = dist.StateSpace.categorical(p["m"])
    freq = dist.marginals_pam(space, theta, 1.0, NoiseSpec.gumbel(p["tau"]), p["samples"], rng)
    exact = dist.marginals_exact(space, theta, p["tau"])
    write_csv(cfg.output_dir / "gumbel_max.csv", ["category", "theta", "empirical", "softmax", "abs_error"],
              [(i, theta[i], freq[i], exact[i], abs(freq[i] - exact[i])) for i in range(p["m"])])
    log.info("max abs error %.4g", float(np.max(np.abs(freq - exact))))


def run_shortest_path(cfg: ExperimentConfig):
    p = cfg.params
    data = H.gen_path_dataset(p["grid_size"], p["n_examples"], p["features"], cfg.seed)
    kappa = p["kappa"]
    if kappa == "auto":
        kappa = max(1, int(round(H.mean_path_length(data))))
    noise = _noise_from({**p, "kappa": kappa})
    spec = EstimatorSpec(p["estimator"], noise, p["samples"], _target_from(p))
    sgd = H.SgdConfig(p["lr"], p["momentum"], p["steps"], 1, cfg.seed)
    _, trace = H.train_path_model(data, spec, p["loss"], sgd, batch_size=p["batch_size"])
    acc = trace.metrics["accuracy"]
    write_csv(cfg.output_dir / "trace.csv", ["epoch", "loss", "accuracy"],
              [(i + 1, trace.losses[i], acc[i]) for i in range(len(acc))])
    final = float(acc[-1]) if len(acc) else trace.metrics["baseline"]
    write_csv(cfg.output_dir / "summary.csv",
              ["estimator", "target", "loss", "noise", "baseline_accuracy", "final_accuracy"],
              [(spec.kind.value, p["target"], p["loss"], str(noise), trace.metrics["baseline"], final)])
    log.info("accuracy %.3f -> %.3f", trace.metrics["baseline"], final)


def run_oracle_dump(cfg: ExperimentConfig):
    p = cfg.params
    kind = dist.SpaceKind(p["space"])
    if kind is dist.SpaceKind.CATEGORICAL:
        space = dist.StateSpace.categorical(p["m"])
    elif kind is dist.SpaceKind.K_SUBSET:
        space = dist.StateSpace.k_subset(p["m"], p["k"])
    else:
        space = dist.StateSpace.grid_path(p["grid_size"], p["grid_size"])
    theta = H.run_rng(cfg.seed).standard_normal(space.m)
    states = dist.enumerate_states(space)
    probs = dist.probabilities(space, theta, p["tau"])
    write_csv(cfg.output_dir / "states.csv", ["index", "state", "weight", "probability"],
              [(i, "".join(str(int(b)) for b in z), float(z @ theta), probs[i]) for i, z in enumerate(states)])
    mu = probs @ states
    write_csv(cfg.output_dir / "marginals.csv", ["coordinate", "theta", "marginal"],
              [(i, theta[i], mu[i]) for i in range(space.m)])
    write_csv(cfg.output_dir / "summary.csv", ["space", "n_states", "log_partition", "tau"],
              [(str(space), len(states), dist.log_partition(space, theta, p["tau"]), p["tau"])])


RUNNERS = {
    "toy-topk": run_toy_topk,
    "sensitivity": run_sensitivity,
    "sog-stats": run_sog_stats,
    "gumbel-max-check": run_gumbel_max_check,
    "shortest-path": run_shortest_path,
    "oracle-dump": run_oracle_dump,
}


def run(cfg: ExperimentConfig) -> int:
    prepare_output(cfg)
    start = time.perf_counter()
    RUNNERS[cfg.experiment](cfg)
    write_manifest(cfg, time.perf_counter() - start)
    return 0


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return run(config_from_args(args))
    except (ConfigError, ValueError, OSError) as exc:
        print(f"imle: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
