"""Monte Carlo engine: simulation models, reproducible parallel replication,
and coverage/length reporting.

Replication r of a run with seed s always draws from the counter-based
Philox stream keyed by (s, r), so results are identical for any worker
count; uniforms are mapped to Normals by the inverse CDF.  Aggregation
happens single-threaded in replication order, which makes the assembled
report byte-for-byte reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtri

from .bandwidth import (
    dpi_bandwidth_density,
    dpi_bandwidth_lp,
    mse_bandwidth_density_normal_ref,
    mse_bandwidth_lp,
    rot_bandwidth,
    silverman_rot_density,
)
from .density import DensitySample, density_infer
from .errors import NpinferError, SingularDesignError, ZeroCurvatureError
from .kernels import kernel
from .locpoly import RegressionSample, VarianceMethod, lp_infer

__all__ = [
    "DensityModel",
    "RegressionModel",
    "DENSITY_MODELS",
    "REGRESSION_MODELS",
    "McConfig",
    "McReport",
    "gen_density_sample",
    "gen_regression_sample",
    "replication_rng",
    "run_mc",
    "bandwidth_grid_sweep",
]

METHODS = ("US", "BC", "RBC")

# slack for the coverage indicator so exact noise-free reproduction scores
# as covered despite roundoff-width intervals
_COVER_SLACK = 1e-9


# ----------------------------------------------------------------------
# data-generating processes
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class DensityModel:
    """A Gaussian mixture density: components are (weight, mean, sd)."""

    id: int
    mixture: tuple

    def __post_init__(self):
        w = sum(c[0] for c in self.mixture)
        if abs(w - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to one")
        if any(c[2] <= 0 for c in self.mixture):
            raise ValueError("component standard deviations must be positive")

    def density(self, x):
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for w, m, s in self.mixture:
            total += w * np.exp(-0.5 * ((x - m) / s) ** 2) / (s * math.sqrt(2 * math.pi))
        return total if total.ndim else float(total)

    @property
    def mean(self) -> float:
        return sum(w * m for w, m, _ in self.mixture)


DENSITY_MODELS = {
    1: DensityModel(1, ((1.0, 0.0, 1.0),)),
    2: DensityModel(
        2,
        (
            (1 / 5, 0.0, 1.0),
            (1 / 5, 1 / 2, 2 / 3),
            (3 / 5, 13 / 12, 5 / 9),
        ),
    ),
    3: DensityModel(3, ((1 / 2, -1.0, 2 / 3), (1 / 2, 1.0, 2 / 3))),
    4: DensityModel(4, ((3 / 4, 0.0, 1.0), (1 / 4, 3 / 2, 1 / 3))),
}


def _m1(x):
    return np.sin(4 * x) + 2 * np.exp(-64 * x**2)


def _m2(x):
    return 2 * x + 2 * np.exp(-64 * x**2)


def _m3(x):
    return 0.3 * np.exp(-4 * (2 * x + 1) ** 2) + 0.7 * np.exp(-16 * (2 * x - 1) ** 2)


def _m4(x):
    return x + 5 * np.exp(-50 * x**2) / math.sqrt(2 * math.pi)


def _m5(x):
    return np.sin(3 * np.pi * x / 2) / (1 + 18 * x**2 * (np.sign(x) + 1))


def _m6(x):
    return np.sin(np.pi * x / 2) / (1 + 2 * x**2 * (np.sign(x) + 1))


@dataclass(frozen=True)
class RegressionModel:
    """Y = m(X) + eps with X uniform on x_law and eps standard Normal."""

    id: int
    m: Callable
    noise_sd: float = 1.0
    x_law: tuple = (-1.0, 1.0)


REGRESSION_MODELS = {
    1: RegressionModel(1, _m1),
    2: RegressionModel(2, _m2),
    3: RegressionModel(3, _m3),
    4: RegressionModel(4, _m4),
    5: RegressionModel(5, _m5),
    6: RegressionModel(6, _m6),
}


# ----------------------------------------------------------------------
# reproducible draws
# ----------------------------------------------------------------------

def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Counter-based substream for one replication: Philox keyed by (seed, rep)."""
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, rep & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _open_uniform(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms strictly inside (0, 1), safe for the inverse Normal CDF."""
    return rng.integers(1, 2**53, size=size).astype(float) / 2**53


def _standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    return ndtri(_open_uniform(rng, size))


def gen_density_sample(model: DensityModel, n: int, rng: np.random.Generator) -> DensitySample:
    """n i.i.d. draws from the Gaussian mixture (component pick, then Normal)."""
    u = _open_uniform(rng, n)
    z = _standard_normal(rng, n)
    weights = np.array([c[0] for c in model.mixture])
    means = np.array([c[1] for c in model.mixture])
    sds = np.array([c[2] for c in model.mixture])
    comp = np.searchsorted(np.cumsum(weights), u)
    comp = np.clip(comp, 0, len(weights) - 1)
    return DensitySample(means[comp] + sds[comp] * z)


def gen_regression_sample(
    model: RegressionModel, n: int, rng: np.random.Generator, x_law: tuple | None = None
) -> RegressionSample:
    """n i.i.d. draws of (X, Y) with X uniform and Normal errors."""
    lo, hi = x_law if x_law is not None else model.x_law
    x = lo + (hi - lo) * _open_uniform(rng, n)
    eps = _standard_normal(rng, n)
    return RegressionSample(x, model.m(x) + model.noise_sd * eps)


# ----------------------------------------------------------------------
# configuration and report
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class McConfig:
    """One Monte Carlo experiment.

    ``bw_rule`` is one of "dpi", "rot", "mse", "silverman" (density only),
    or "fixed" (requires ``fixed_h``).  ``boundary`` switches the local
    polynomial selectors to the boundary rate.  ``workers`` is an
    execution detail and is excluded from the report echo so that reports
    are byte-identical across worker counts.
    """

    estimator: str  # "density" | "lpreg"
    model: int
    n: int
    replications: int
    evaluation_points: tuple
    alpha: float = 0.05
    p: int = 1
    q: int = 2
    rho: float = 1.0
    kappa: int = 2
    kernel_name: str = "epanechnikov"
    bias_kernel_name: str | None = None
    vce: str = "hc3"
    nn_neighbors: int = 3
    bw_rule: str = "dpi"
    fixed_h: float | None = None
    boundary: bool = False
    x_law: tuple | None = None
    seed: int = 1
    workers: int = 1

    def __post_init__(self):
        if self.estimator not in ("density", "lpreg"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.bw_rule == "fixed" and not (self.fixed_h and self.fixed_h > 0):
            raise ValueError("fixed bandwidth rule requires a positive fixed_h")
        if self.estimator == "lpreg" and not self.rho > 0:
            raise ValueError("local polynomial simulations require rho > 0")
        if self.estimator == "density" and self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.estimator == "density" and self.model not in DENSITY_MODELS:
            raise ValueError(f"unknown density model {self.model}")
        if self.estimator == "lpreg" and self.model not in REGRESSION_MODELS:
            raise ValueError(f"unknown regression model {self.model}")
        object.__setattr__(self, "evaluation_points", tuple(float(x) for x in self.evaluation_points))

    def echo(self) -> dict:
        return {
            "estimator": self.estimator,
            "model": self.model,
            "n": self.n,
            "replications": self.replications,
            "evaluation_points": list(self.evaluation_points),
            "alpha": self.alpha,
            "p": self.p,
            "q": self.q,
            "rho": self.rho,
            "kappa": self.kappa,
            "kernel": self.kernel_name,
            "bias_kernel": self.bias_kernel_name,
            "vce": self.vce,
            "nn_neighbors": self.nn_neighbors,
            "bw_rule": self.bw_rule,
            "fixed_h": self.fixed_h,
            "boundary": self.boundary,
            "x_law": list(self.x_law) if self.x_law else None,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class McReport:
    """Aggregated coverage, length, failure, and bandwidth statistics."""

    config: dict
    points: tuple
    truths: tuple
    coverage: dict  # method -> list per point
    mean_length: dict
    mean_bias: dict
    degenerate: dict
    singular_failures: tuple
    bandwidth_failures: tuple
    used_replications: tuple
    bandwidth_stats: tuple

    def to_dict(self) -> dict:
        per_point = []
        for i, x in enumerate(self.points):
            per_point.append(
                {
                    "x": x,
                    "truth": self.truths[i],
                    "methods": {
                        m: {
                            "coverage": self.coverage[m][i],
                            "mean_length": self.mean_length[m][i],
                            "mean_bias": self.mean_bias[m][i],
                            "degenerate": self.degenerate[m][i],
                        }
                        for m in METHODS
                    },
                    "failures": {
                        "singular": self.singular_failures[i],
                        "bandwidth": self.bandwidth_failures[i],
                    },
                    "used_replications": self.used_replications[i],
                    "bandwidth": self.bandwidth_stats[i],
                }
            )
        return {"config": self.config, "results": per_point}


# ----------------------------------------------------------------------
# single replication
# ----------------------------------------------------------------------

def _density_bandwidth(config: McConfig, sample: DensitySample, x: float):
    K = kernel(config.kernel_name)
    L = kernel(config.bias_kernel_name or "mseopt-deriv2")
    rule = config.bw_rule
    if rule == "fixed":
        return config.fixed_h
    if rule == "dpi":
        return dpi_bandwidth_density(sample, x, K, L, config.kappa, config.alpha).value
    if rule == "rot":
        h_mse = mse_bandwidth_density_normal_ref(sample, x, config.kappa, K).value
        return rot_bandwidth(h_mse, "density", config.kappa, sample.n).value
    if rule == "mse":
        return mse_bandwidth_density_normal_ref(sample, x, config.kappa, K).value
    if rule == "silverman":
        bw = silverman_rot_density(sample, config.kappa)
        if bw.diagnostics.get("invalid"):
            raise ZeroCurvatureError("silverman bandwidth degenerate")
        return bw.value
    raise ValueError(f"unknown bandwidth rule {rule!r}")


def _lp_bandwidth(config: McConfig, sample: RegressionSample, x: float):
    K = kernel(config.kernel_name)
    rule = config.bw_rule
    if rule == "fixed":
        return config.fixed_h
    if rule == "dpi":
        return dpi_bandwidth_lp(
            sample, x, config.p, config.boundary, K, config.alpha
        ).value
    if rule == "rot":
        h_mse = mse_bandwidth_lp(sample, x, config.p, K, boundary=config.boundary).value
        context = "lp-boundary" if config.boundary else "lp-interior"
        return rot_bandwidth(h_mse, context, config.p, sample.n).value
    if rule == "mse":
        return mse_bandwidth_lp(sample, x, config.p, K, boundary=config.boundary).value
    raise ValueError(f"unknown bandwidth rule {rule!r}")


def _one_replication(config: McConfig, rep: int) -> list:
    """Outcome records for one replication, one entry per evaluation point.

    Each record is (status, h, [(center, half_width), ...] per method);
    status 0 = ok, 1 = singular design, 2 = bandwidth undefined.
    """
    rng = replication_rng(config.seed, rep)
    out = []
    if config.estimator == "density":
        model = DENSITY_MODELS[config.model]
        sample = gen_density_sample(model, config.n, rng)
        K = kernel(config.kernel_name)
        L = kernel(config.bias_kernel_name or "mseopt-deriv2")
        for x in config.evaluation_points:
            try:
                h = _density_bandwidth(config, sample, x)
            except (ZeroCurvatureError, SingularDesignError):
                out.append((2, math.nan, None))
                continue
            b = math.inf if config.rho == 0 else h / config.rho
            try:
                res = density_infer(sample, x, h, b, K, L, config.kappa, config.alpha)
            except NpinferError:
                out.append((1, h, None))
                continue
            out.append(
                (0, h, tuple((ci.center, ci.half_width) for ci in res.intervals))
            )
    else:
        model = REGRESSION_MODELS[config.model]
        sample = gen_regression_sample(model, config.n, rng, config.x_law)
        K = kernel(config.kernel_name)
        L = kernel(config.bias_kernel_name or config.kernel_name)
        method = VarianceMethod(config.vce, config.nn_neighbors)
        for x in config.evaluation_points:
            try:
                h = _lp_bandwidth(config, sample, x)
            except (ZeroCurvatureError, SingularDesignError):
                out.append((2, math.nan, None))
                continue
            b = math.inf if config.rho == 0 else h / config.rho
            try:
                res = lp_infer(
                    sample, x, config.p, config.q, h, b, K, L, config.alpha, method
                )
            except NpinferError:
                out.append((1, h, None))
                continue
            out.append(
                (0, h, tuple((ci.center, ci.half_width) for ci in res.intervals))
            )
    return out


def _worker_chunk(args) -> list:
    config, reps = args
    return [(r, _one_replication(config, r)) for r in reps]


# ----------------------------------------------------------------------
# the engine
# ----------------------------------------------------------------------

def _truths(config: McConfig):
    if config.estimator == "density":
        model = DENSITY_MODELS[config.model]
        return tuple(float(model.density(x)) for x in config.evaluation_points)
    model = REGRESSION_MODELS[config.model]
    return tuple(float(model.m(np.asarray(x))) for x in config.evaluation_points)


def _quartile_stats(values: np.ndarray) -> dict:
    if values.size == 0:
        return {"mean": None, "sd": None, "min": None, "q25": None,
                "median": None, "q75": None, "max": None}
    q25, med, q75 = np.percentile(values, [25, 50, 75])
    return {
        "mean": float(np.mean(values)),
        "sd": float(np.std(values, ddof=1)) if values.size > 1 else 0.0,
        "min": float(np.min(values)),
        "q25": float(q25),
        "median": float(med),
        "q75": float(q75),
        "max": float(np.max(values)),
    }


def run_mc(config: McConfig, workers: int | None = None, _replication=None) -> McReport:
    """Run the Monte Carlo experiment and aggregate a coverage report.

    Replication failures (singular designs, undefined bandwidths) are
    tallied per evaluation point and excluded from coverage denominators;
    they never abort the run.  ``_replication`` is a test hook replacing
    the built-in estimator path (single-worker only).
    """
    nrep = config.replications
    workers = workers if workers is not None else config.workers
    rep_fn = _replication or _one_replication

    if _replication is not None or workers <= 1:
        records = [(r, rep_fn(config, r)) for r in range(nrep)]
    else:
        chunk = max(1, math.ceil(nrep / (workers * 4)))
        chunks = [
            (config, range(start, min(start + chunk, nrep)))
            for start in range(0, nrep, chunk)
        ]
        records = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_worker_chunk, chunks):
                records.extend(part)
    records.sort(key=lambda t: t[0])
    return _aggregate(config, records, _truths(config))


def _aggregate(config: McConfig, records, truths) -> McReport:
    npts = len(config.evaluation_points)
    nrep = config.replications
    cover = {m: np.zeros(npts, dtype=int) for m in METHODS}
    length_sum = {m: np.zeros(npts) for m in METHODS}
    bias_sum = {m: np.zeros(npts) for m in METHODS}
    degen = {m: np.zeros(npts, dtype=int) for m in METHODS}
    singular = np.zeros(npts, dtype=int)
    bad_bw = np.zeros(npts, dtype=int)
    used = np.zeros(npts, dtype=int)
    h_values = [[] for _ in range(npts)]

    for _rep, recs in records:
        for i, (status, h, intervals) in enumerate(recs):
            if status == 2:
                bad_bw[i] += 1
                continue
            if status == 1:
                singular[i] += 1
                continue
            used[i] += 1
            h_values[i].append(h)
            truth = truths[i]
            slack = _COVER_SLACK * max(1.0, abs(truth))
            for m_idx, m in enumerate(METHODS):
                center, hw = intervals[m_idx]
                if center - hw - slack <= truth <= center + hw + slack:
                    cover[m][i] += 1
                length_sum[m][i] += 2.0 * hw
                bias_sum[m][i] += center - truth
                if hw == 0.0:
                    degen[m][i] += 1

    coverage = {
        m: [float(cover[m][i] / used[i]) if used[i] else None for i in range(npts)]
        for m in METHODS
    }
    mean_length = {
        m: [float(length_sum[m][i] / used[i]) if used[i] else None for i in range(npts)]
        for m in METHODS
    }
    mean_bias = {
        m: [float(bias_sum[m][i] / used[i]) if used[i] else None for i in range(npts)]
        for m in METHODS
    }
    degenerate = {m: [int(v) for v in degen[m]] for m in METHODS}
    bw_stats = tuple(_quartile_stats(np.array(h_values[i])) for i in range(npts))
    return McReport(
        config=config.echo(),
        points=config.evaluation_points,
        truths=tuple(truths),
        coverage=coverage,
        mean_length=mean_length,
        mean_bias=mean_bias,
        degenerate=degenerate,
        singular_failures=tuple(int(v) for v in singular),
        bandwidth_failures=tuple(int(v) for v in bad_bw),
        used_replications=tuple(int(v) for v in used),
        bandwidth_stats=bw_stats,
    )


def bandwidth_grid_sweep(config: McConfig, h_grid: Sequence[float], workers: int | None = None):
    """Coverage/length/bias curves over a fixed bandwidth grid.

    Runs the experiment once per grid bandwidth with the fixed rule and
    returns plot-ready rows: one per (h, evaluation point, method) with
    coverage, mean interval length, and mean bias (center minus truth).
    """
    h_grid = [float(h) for h in h_grid]
    if any(b <= a for a, b in zip(h_grid, h_grid[1:])) or any(h <= 0 for h in h_grid):
        raise ValueError("h_grid must be strictly increasing and positive")
    rows = []
    for h in h_grid:
        sub = replace(config, bw_rule="fixed", fixed_h=h)
        report = run_mc(sub, workers=workers)
        for i, x in enumerate(report.points):
            for m in METHODS:
                rows.append(
                    {
                        "h": h,
                        "x": x,
                        "method": m,
                        "coverage": report.coverage[m][i],
                        "mean_length": report.mean_length[m][i],
                        "mean_bias": report.mean_bias[m][i],
                    }
                )
    return rows
