"""Kernel density estimation at a point with bias-corrected inference.

The point estimate is the classical kernel average

    f_hat(x) = (n h)^(-1) sum_i K((x - X_i) / h),

the bias estimate plugs a derivative-kernel estimate of f^(kappa) into the
leading smoothing-bias term, and the variances are fixed-n sample analogues
of

    (n h) V[f_hat] = h^(-1) { E[N((x-X)/h)^2] - E[N((x-X)/h)]^2 },

with N = K for the undersmoothed (US) statistic and N = M_rho, the induced
bias-corrected kernel, for the robust bias-corrected (RBC) one.  Three
confidence intervals result: US centered at f_hat, BC and RBC centered at
f_hat - bias_hat, with BC sharing the US width and RBC carrying the
variance of the bias correction as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DegenerateSampleError
from .kernels import KernelSpec, derivative_part, induced_kernel

__all__ = [
    "DensitySample",
    "ConfidenceInterval",
    "DensityInference",
    "density_point_estimate",
    "density_derivative_estimate",
    "density_bias_estimate",
    "density_variance_us",
    "density_variance_rbc",
    "density_infer",
    "gj_density_estimate",
    "gj_equivalent_kernel",
]


@dataclass(frozen=True)
class DensitySample:
    """An i.i.d. univariate sample; observations must be finite.

    Observations are stored sorted, which makes every downstream sum
    independent of the input ordering (permutation invariance holds
    exactly, not just to rounding).
    """

    observations: np.ndarray

    def __post_init__(self):
        obs = np.sort(np.asarray(self.observations, dtype=float).ravel())
        if obs.size < 1:
            raise DegenerateSampleError("sample must contain at least one observation")
        if not np.all(np.isfinite(obs)):
            raise ValueError("sample contains non-finite values")
        object.__setattr__(self, "observations", obs)

    @property
    def n(self) -> int:
        return self.observations.size


@dataclass(frozen=True)
class ConfidenceInterval:
    """A symmetric interval with its nominal level and method tag."""

    center: float
    half_width: float
    level: float
    flavor: str  # "US" | "BC" | "RBC"

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    @property
    def length(self) -> float:
        return 2.0 * self.half_width

    def covers(self, value: float) -> bool:
        return self.lower <= value <= self.upper


@dataclass(frozen=True)
class DensityInference:
    """All point-and-interval output for one evaluation point."""

    x: float
    h: float
    b: float
    rho: float
    kappa: int
    f_hat: float
    bias_hat: float
    se_us: float
    se_rbc: float
    intervals: tuple
    degenerate: bool
    negative_center: bool

    @property
    def ci_us(self) -> ConfidenceInterval:
        return self.intervals[0]

    @property
    def ci_bc(self) -> ConfidenceInterval:
        return self.intervals[1]

    @property
    def ci_rbc(self) -> ConfidenceInterval:
        return self.intervals[2]

    def to_dict(self) -> dict:
        return {
            "x": self.x,
            "h": self.h,
            # b = +inf encodes rho = 0 (no correction); JSON has no inf
            "b": self.b if np.isfinite(self.b) else None,
            "rho": self.rho,
            "kappa": self.kappa,
            "f_hat": self.f_hat,
            "bias_hat": self.bias_hat,
            "se_us": self.se_us,
            "se_rbc": self.se_rbc,
            "intervals": [
                {
                    "flavor": ci.flavor,
                    "center": ci.center,
                    "half_width": ci.half_width,
                    "lower": ci.lower,
                    "upper": ci.upper,
                    "level": ci.level,
                }
                for ci in self.intervals
            ],
            "degenerate": self.degenerate,
            "negative_center": self.negative_center,
        }


def _check_bandwidth(h: float, name: str = "h") -> None:
    if not (h > 0) or not np.isfinite(h):
        raise ValueError(f"{name} must be a positive finite number, got {h!r}")


def _check_bias_bandwidth(b: float) -> None:
    # b = +inf encodes rho = h/b = 0, the uncorrected limit
    if not (b > 0) or np.isnan(b):
        raise ValueError(f"b must be positive, got {b!r}")


def density_point_estimate(sample: DensitySample, x: float, h: float, K: KernelSpec) -> float:
    """(n h)^(-1) sum_i K((x - X_i)/h)."""
    _check_bandwidth(h)
    u = (x - sample.observations) / h
    return float(np.sum(K.eval_many(u)) / (sample.n * h))


def density_derivative_estimate(
    sample: DensitySample, x: float, b: float, L: KernelSpec, kappa: int
) -> float:
    """Derivative estimate (n b^(1+kappa))^(-1) sum_i L^(kappa)((x - X_i)/b)."""
    _check_bias_bandwidth(b)
    if np.isinf(b):
        return 0.0
    lk = derivative_part(L, kappa)
    u = (x - sample.observations) / b
    return float(np.sum(lk.eval_many(u)) / (sample.n * b ** (1 + kappa)))


def density_bias_estimate(
    sample: DensitySample,
    x: float,
    h: float,
    b: float,
    K: KernelSpec,
    L: KernelSpec,
    kappa: int,
) -> float:
    """Plug-in estimate of the leading smoothing bias h^kappa f^(kappa)(x) mu_{K,kappa}."""
    _check_bandwidth(h)
    _check_bias_bandwidth(b)
    fk = density_derivative_estimate(sample, x, b, L, kappa)
    return float(h**kappa * fk * K.moment_mu(kappa))


def _fixedn_variance(sample: DensitySample, x: float, h: float, N: KernelSpec) -> float:
    if sample.n < 2:
        raise DegenerateSampleError("variance estimation requires n >= 2")
    vals = N.eval_many((x - sample.observations) / h)
    mean_sq = float(np.mean(vals**2))
    sq_mean = float(np.mean(vals)) ** 2
    return max(0.0, (mean_sq - sq_mean) / h)


def density_variance_us(sample: DensitySample, x: float, h: float, K: KernelSpec) -> float:
    """Fixed-n variance estimate sigma_US^2 of sqrt(nh) f_hat."""
    _check_bandwidth(h)
    return _fixedn_variance(sample, x, h, K)


def density_variance_rbc(
    sample: DensitySample,
    x: float,
    h: float,
    b: float,
    K: KernelSpec,
    L: KernelSpec,
    kappa: int,
) -> float:
    """Fixed-n variance estimate sigma_RBC^2, with the induced kernel M in place of K."""
    _check_bandwidth(h)
    _check_bias_bandwidth(b)
    rho = 0.0 if np.isinf(b) else h / b
    M = induced_kernel(K, L, kappa, rho)
    return _fixedn_variance(sample, x, h, M)


def density_infer(
    sample: DensitySample,
    x: float,
    h: float,
    b: float,
    K: KernelSpec,
    L: KernelSpec,
    kappa: int = 2,
    alpha: float = 0.05,
) -> DensityInference:
    """Assemble the US, BC, and RBC confidence intervals at one point.

    All three intervals use the Normal quantile z = Phi^(-1)(1 - alpha/2)
    and half-widths z * se / sqrt(nh); zero-variance windows yield
    zero-width intervals and set the degeneracy flag instead of failing.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    f_hat = density_point_estimate(sample, x, h, K)
    bias_hat = density_bias_estimate(sample, x, h, b, K, L, kappa)
    var_us = density_variance_us(sample, x, h, K)
    var_rbc = density_variance_rbc(sample, x, h, b, K, L, kappa)
    se_us = float(np.sqrt(var_us))
    se_rbc = float(np.sqrt(var_rbc))

    z = float(ndtri(1.0 - alpha / 2.0))
    scale = np.sqrt(sample.n * h)
    level = 1.0 - alpha
    center_bc = f_hat - bias_hat
    hw_us = z * se_us / scale
    hw_rbc = z * se_rbc / scale
    intervals = (
        ConfidenceInterval(f_hat, hw_us, level, "US"),
        ConfidenceInterval(center_bc, hw_us, level, "BC"),
        ConfidenceInterval(center_bc, hw_rbc, level, "RBC"),
    )
    return DensityInference(
        x=x,
        h=h,
        b=b,
        rho=0.0 if np.isinf(b) else h / b,
        kappa=kappa,
        f_hat=f_hat,
        bias_hat=bias_hat,
        se_us=se_us,
        se_rbc=se_rbc,
        intervals=intervals,
        degenerate=(se_us == 0.0 or se_rbc == 0.0),
        negative_center=(f_hat < 0.0 or center_bc < 0.0),
    )


# ----------------------------------------------------------------------
# generalized jackknife
# ----------------------------------------------------------------------

def _gj_ratio(h1: float, h2: float, K1: KernelSpec, K2: KernelSpec) -> float:
    return (h1**2 * K1.moment_mu(2)) / (h2**2 * K2.moment_mu(2))


def gj_density_estimate(
    sample: DensitySample,
    x: float,
    h1: float,
    h2: float,
    K1: KernelSpec,
    K2: KernelSpec,
) -> float:
    """Bias-nulling combination (f1 - R f2) / (1 - R) of two kernel estimates.

    R = (h1^2 mu_{K1,2}) / (h2^2 mu_{K2,2}) kills the leading bias term
    exactly; R within 1e-12 of one is a degenerate combination and is
    rejected.
    """
    _check_bandwidth(h1, "h1")
    _check_bandwidth(h2, "h2")
    R = _gj_ratio(h1, h2, K1, K2)
    if abs(R - 1.0) <= 1e-12:
        raise ValueError(f"degenerate jackknife combination: R = {R!r}")
    f1 = density_point_estimate(sample, x, h1, K1)
    f2 = density_point_estimate(sample, x, h2, K2)
    return (f1 - R * f2) / (1.0 - R)


def gj_equivalent_kernel(K1: KernelSpec, K2: KernelSpec, h1: float, h2: float) -> KernelSpec:
    """The single kernel whose h1-average reproduces the jackknife estimate.

    With rho = h1/h2 and c = rho^3 mu_{K1,2} / (mu_{K2,2} (1 - R)),

        Mtilde(u) = (1 + c/rho) K1(u) - c K2(rho u),

    so that (n h1)^(-1) sum_i Mtilde((X_i - x)/h1) equals the jackknife
    combination for every sample.
    """
    from fractions import Fraction

    from .kernels import KernelSpec as _KS
    from .kernels import _combination

    mu1 = K1.moment_mu_exact(2)
    mu2 = K2.moment_mu_exact(2)
    rho = Fraction(h1) / Fraction(h2)
    R = rho**2 * mu1 / mu2
    if abs(float(R) - 1.0) <= 1e-12:
        raise ValueError(f"degenerate jackknife combination: R = {float(R)!r}")
    c = rho**3 * mu1 / (mu2 * (1 - R))
    pieces = _combination(
        [
            (1 + c / rho, K1, Fraction(1)),
            (-c, K2, rho),
        ]
    )
    return _KS(
        name=f"gj-{K1.name}-{K2.name}",
        pieces=pieces,
        kappa=4,
        derivative_target=0,
    )
