"""Bandwidth selection: MSE pilots, rule-of-thumb rescaling, and the
direct plug-in coverage-error-optimal selectors.

The coverage-error expansion of a Studentized kernel statistic has three
leading terms in the constant H of h = H * n^(-rate):

    H^(-1) * q1  +  H^(1 + 2s) * (bias const)^2 * q2  +  H^s * (bias const) * q3,

where q1, q2, q3 are odd polynomials in the Normal quantile whose
coefficients depend only on the equivalent kernel (density case) or on
estimable population moments (local polynomial case), and s is the order
of the post-correction bias.  The selectors here estimate the unknown
constants, minimize the absolute value of this three-term objective over
a wide bracket (squaring it for speed), and rescale by the appropriate
root of n.  When a pilot quantity degenerates the selectors fall back to
the rule-of-thumb rescaling and flag the fallback in the diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .density import DensitySample, density_derivative_estimate, density_point_estimate
from .errors import (
    MonotoneObjectiveError,
    SingularDesignError,
    ZeroCurvatureError,
)
from .kernels import KernelSpec, TruncatedSupport, induced_kernel, kernel, minvar_derivative_kernel
from .locpoly import LocPolyFit, RegressionSample, VarianceMethod, lp_fit

__all__ = [
    "CoveragePolys",
    "BandwidthChoice",
    "coverage_polys_at",
    "coverage_polys_density",
    "normal_reference_density_derivative",
    "mse_bandwidth_density_normal_ref",
    "mse_bandwidth_density_reference",
    "population_mse_bandwidth_density",
    "silverman_rot_density",
    "rot_bandwidth",
    "dpi_bandwidth_density",
    "global_poly_derivative",
    "mse_bandwidth_lp",
    "dpi_bandwidth_lp",
    "minimize_ce_objective",
    "pairwise_ustat_mean",
]


# ----------------------------------------------------------------------
# coverage-error polynomials
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CoveragePolys:
    """Values of the three coverage-error polynomials at z_{alpha/2}."""

    q1: float
    q2: float
    q3: float
    alpha: float


def coverage_polys_at(N: KernelSpec, z: float, trunc: TruncatedSupport | None = None):
    """Evaluate (q1, q2, q3) for kernel N at an arbitrary quantile z.

    q1 = t2^-2 t4 (z^3 - 3z)/6 - t2^-3 t3^2 [2z^3/3 + (z^5 - 10z^3 + 15z)/9]
    q2 = -t2^-1 z
    q3 = t2^-2 t3 (2z^3/3)

    with t_k the integral of N(u)^k.
    """
    t2 = N.moment_theta(2, trunc)
    t3 = N.moment_theta(3, trunc)
    t4 = N.moment_theta(4, trunc)
    q1 = t2**-2 * t4 * (z**3 - 3 * z) / 6.0 - t2**-3 * t3**2 * (
        2 * z**3 / 3.0 + (z**5 - 10 * z**3 + 15 * z) / 9.0
    )
    q2 = -z / t2
    q3 = t2**-2 * t3 * (2 * z**3 / 3.0)
    return q1, q2, q3


def coverage_polys_density(
    N: KernelSpec, alpha: float, trunc: TruncatedSupport | None = None
) -> CoveragePolys:
    """The polynomials at the two-sided Normal critical value for level 1-alpha."""
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    z = float(ndtri(1.0 - alpha / 2.0))
    q1, q2, q3 = coverage_polys_at(N, z, trunc)
    return CoveragePolys(q1=q1, q2=q2, q3=q3, alpha=alpha)


# ----------------------------------------------------------------------
# bandwidth choices
# ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BandwidthChoice:
    """A selected bandwidth, its rule tag, and selection diagnostics."""

    value: float
    rule: str  # "fixed" | "mse-normal-ref" | "silverman-rot" | "rot" | "dpi"
    diagnostics: dict = field(default_factory=dict)

    @property
    def fallback(self) -> bool:
        return bool(self.diagnostics.get("fallback"))


# ----------------------------------------------------------------------
# normal-reference machinery
# ----------------------------------------------------------------------

def _hermite_prob(k: int, t: float) -> float:
    """Probabilists' Hermite polynomial He_k(t)."""
    if k == 0:
        return 1.0
    prev, cur = 1.0, t
    for j in range(1, k):
        prev, cur = cur, t * cur - j * prev
    return cur


def normal_reference_density_derivative(x: float, mu: float, sigma: float, k: int) -> float:
    """k-th derivative at x of the Normal(mu, sigma^2) density."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    t = (x - mu) / sigma
    phi = math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
    return (-1.0) ** k * _hermite_prob(k, t) * phi / sigma ** (k + 1)


def mse_bandwidth_density_reference(
    x: float,
    n: int,
    kappa: int,
    K: KernelSpec,
    mu: float = 0.0,
    sigma: float = 1.0,
) -> BandwidthChoice:
    """MSE-optimal density bandwidth under a Normal(mu, sigma^2) reference.

    Uses the variance = squared-bias balance

        h^(1+2*kappa) = theta_{K,2} f(x) / ( n (mu_{K,kappa} f^(kappa)(x))^2 ),

    the convention under which the undersmoothed interval at h*_mse has
    bias/sd ratio one and hence roughly 83% coverage at the 95% level.
    """
    if kappa not in (2, 4):
        raise ValueError("normal reference supports kappa in {2, 4}")
    f_x = normal_reference_density_derivative(x, mu, sigma, 0)
    f_k = normal_reference_density_derivative(x, mu, sigma, kappa)
    if abs(f_k) < 1e-12:
        raise ZeroCurvatureError(
            f"reference f^({kappa})({x}) vanishes; MSE bandwidth undefined"
        )
    t2 = K.moment_theta(2)
    mu_k = K.moment_mu(kappa)
    ratio = t2 * f_x / (mu_k * f_k) ** 2
    h = (ratio / n) ** (1.0 / (1 + 2 * kappa))
    return BandwidthChoice(
        value=float(h),
        rule="mse-normal-ref",
        diagnostics={"mu": mu, "sigma": sigma, "f_x": f_x, "f_kappa": f_k},
    )


def population_mse_bandwidth_density(density, x: float, n: int, K: KernelSpec) -> float:
    """Population bandwidth at which squared bias equals variance exactly.

    Solves n h bias(h)^2 = sigma^2(h) with the exact fixed-n population
    quantities bias(h) = int K(u) f(x - uh) du - f(x) and sigma^2(h) =
    int K(u)^2 f(x - uh) du - h (int K(u) f(x - uh) du)^2 computed by
    quadrature against the true density.  At this bandwidth the
    undersmoothed t-statistic has bias/sd ratio one, so the nominal-95%
    interval covers with probability near 0.83; the closed-form
    normal-reference rule is the large-n limit of this balance point.
    """
    from scipy.integrate import quad
    from scipy.optimize import brentq

    f_x = float(density(x))

    def moments(h):
        ek = ek2 = 0.0
        for lo, hi, _ in K.pieces:
            ek += quad(lambda u: K(u) * density(x - u * h), float(lo), float(hi))[0]
            ek2 += quad(lambda u: K(u) ** 2 * density(x - u * h), float(lo), float(hi))[0]
        return ek - f_x, ek2 - h * ek**2

    def gap(h):
        bias, sig2 = moments(h)
        return n * h * bias**2 - sig2

    lo, hi = 1e-3, 1e-3
    while gap(hi) < 0:
        hi *= 1.6
        if hi > 1e3:
            raise ZeroCurvatureError("population balance bandwidth not found")
    return float(brentq(gap, lo if gap(lo) < 0 else hi / 1e3, hi, xtol=1e-10))


def mse_bandwidth_density_normal_ref(
    sample: DensitySample, x: float, kappa: int, K: KernelSpec
) -> BandwidthChoice:
    """Same as the reference rule with mu, sigma estimated from the sample."""
    mu = float(np.mean(sample.observations))
    sigma = float(np.std(sample.observations, ddof=1))
    if sigma <= 0:
        raise ZeroCurvatureError("sample standard deviation is zero")
    return mse_bandwidth_density_reference(x, sample.n, kappa, K, mu, sigma)


def silverman_rot_density(sample: DensitySample, r: int = 2) -> BandwidthChoice:
    """Silverman-style rule sigma_hat * 2.34 * n^(-1/(2r+1))."""
    if r < 2 or r % 2 != 0:
        raise ValueError("r must be an even integer >= 2")
    sigma = float(np.std(sample.observations, ddof=1))
    value = sigma * 2.34 * sample.n ** (-1.0 / (2 * r + 1))
    diag = {"sigma": sigma}
    if sigma == 0.0:
        diag["invalid"] = True
    return BandwidthChoice(value=value, rule="silverman-rot", diagnostics=diag)


def rot_bandwidth(h_mse: float, context: str, order: int, n: int) -> BandwidthChoice:
    """Rescale an MSE-optimal bandwidth to the coverage-error-optimal rate.

    Exponents: density -(kappa-2)/((1+2 kappa)(kappa+3)); local polynomial
    -(p-1)/((2p+3)(p+4)) interior and -p/((2p+3)(p+3)) boundary.  The
    exponent is zero for kappa = 2 (density) and p = 1 (interior), where
    the MSE bandwidth already attains the optimal rate.
    """
    if h_mse <= 0:
        raise ValueError("h_mse must be positive")
    if context == "density":
        kappa = order
        expo = -(kappa - 2) / ((1 + 2 * kappa) * (kappa + 3))
    elif context == "lp-interior":
        p = order
        expo = -(p - 1) / ((2 * p + 3) * (p + 4))
    elif context == "lp-boundary":
        p = order
        expo = -p / ((2 * p + 3) * (p + 3))
    else:
        raise ValueError(f"unknown context {context!r}")
    return BandwidthChoice(
        value=float(h_mse * n**expo),
        rule="rot",
        diagnostics={"h_mse": h_mse, "exponent": expo, "context": context},
    )


# ----------------------------------------------------------------------
# one-dimensional coverage-error objective
# ----------------------------------------------------------------------

def minimize_ce_objective(coeffs, exponents, bracket) -> float:
    """Minimize |a H^e1 + b H^e2 + c H^e3| over H in the bracket.

    Squares the objective, scans 200 log-spaced points, then refines with
    golden-section search to 1e-6 relative width; ties break toward the
    smaller H.  A scan minimum on a bracket edge raises
    MonotoneObjectiveError (no interior optimum).
    """
    a, b, c = (float(v) for v in coeffs)
    e1, e2, e3 = (float(e) for e in exponents)
    lo, hi = (float(v) for v in bracket)
    if not (0 < lo < hi):
        raise ValueError("bracket must satisfy 0 < lo < hi")

    def objective(H):
        return (a * H**e1 + b * H**e2 + c * H**e3) ** 2

    grid = np.geomspace(lo, hi, 200)
    vals = np.array([objective(H) for H in grid])
    if not np.all(np.isfinite(vals)):
        raise ValueError("objective is not finite on the bracket")
    idx = int(np.argmin(vals))
    if idx == 0 or idx == len(grid) - 1:
        raise MonotoneObjectiveError(
            "coverage-error objective has its scan minimum at a bracket edge"
        )

    # golden-section refinement on the bracketing triple
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    xl, xr = grid[idx - 1], grid[idx + 1]
    x1 = xr - invphi * (xr - xl)
    x2 = xl + invphi * (xr - xl)
    f1, f2 = objective(x1), objective(x2)
    while (xr - xl) > 1e-6 * xr:
        if f1 <= f2:  # ties move left, toward smaller H
            xr, x2, f2 = x2, x1, f1
            x1 = xr - invphi * (xr - xl)
            f1 = objective(x1)
        else:
            xl, x1, f1 = x1, x2, f2
            x2 = xl + invphi * (xr - xl)
            f2 = objective(x2)
    best = xl if objective(xl) <= objective(xr) else xr
    if objective(grid[idx]) < objective(best):
        best = grid[idx]
    return float(best)


# ----------------------------------------------------------------------
# density: direct plug-in
# ----------------------------------------------------------------------

def _derivative_pilot_bandwidth(
    nu: int, n: int, mu: float, sigma: float, x: float, J: KernelSpec
) -> float:
    """Normal-reference MSE-optimal bandwidth for estimating f^(nu) with J."""
    f_x = normal_reference_density_derivative(x, mu, sigma, 0)
    f_next = normal_reference_density_derivative(x, mu, sigma, nu + 2)
    if abs(f_next) < 1e-12:
        raise ZeroCurvatureError(
            f"reference f^({nu + 2})({x}) vanishes; derivative pilot undefined"
        )
    t2 = J.moment_theta(2)
    mu_next = J.moment_mu(nu + 2)
    num = (1 + 2 * nu) * t2 * f_x
    den = 4.0 * (mu_next * f_next) ** 2
    return float((num / (den * n)) ** (1.0 / (2 * nu + 5)))


def dpi_bandwidth_density(
    sample: DensitySample,
    x: float,
    K: KernelSpec,
    L: KernelSpec,
    kappa: int = 2,
    alpha: float = 0.05,
) -> BandwidthChoice:
    """Direct plug-in coverage-error-optimal bandwidth for the RBC density interval.

    Fixes rho = 1, estimates f^(kappa+2)(x) with a minimum-variance
    derivative kernel at its normal-reference pilot bandwidth, and
    minimizes the squared three-term objective in H; the selected
    bandwidth is H * n^(-1/(kappa+3)).  Falls back to the rule-of-thumb
    rescaling (flagged) when a pilot degenerates or the objective is
    monotone on the bracket.
    """
    n = sample.n
    sigma_x = float(np.std(sample.observations, ddof=1))
    mu_x = float(np.mean(sample.observations))
    diag: dict = {"pilot": "minvar-derivative-kernel, normal-reference MSE bandwidth"}

    def _fallback(reason: str) -> BandwidthChoice:
        try:
            rot = rot_bandwidth(
                mse_bandwidth_density_normal_ref(sample, x, kappa, K).value,
                "density",
                kappa,
                n,
            )
        except ZeroCurvatureError:
            # reference curvature vanished too; Silverman is always defined
            rot = silverman_rot_density(sample, kappa)
            reason += "; rot undefined, used silverman"
        d = dict(rot.diagnostics)
        d.update(diag)
        d.update({"fallback": True, "fallback_reason": reason})
        return BandwidthChoice(value=rot.value, rule="dpi", diagnostics=d)

    nu = kappa + 2
    J = minvar_derivative_kernel(nu)
    try:
        b_pilot = _derivative_pilot_bandwidth(nu, n, mu_x, sigma_x, x, J)
    except ZeroCurvatureError:
        return _fallback("reference curvature for the derivative pilot vanished")
    f_nu = density_derivative_estimate(sample, x, b_pilot, J, nu)
    diag["pilot_bandwidth"] = b_pilot
    diag["f_deriv_hat"] = f_nu
    if abs(f_nu) < 1e-12:
        return _fallback("estimated f^(kappa+2) vanished")

    M = induced_kernel(K, L, kappa, 1.0)
    polys = coverage_polys_density(M, alpha)
    mu_tilde = M.moment_mu(kappa + 2)
    coeffs = (
        polys.q1,
        (f_nu * mu_tilde) ** 2 * polys.q2,
        f_nu * mu_tilde * polys.q3,
    )
    exponents = (-1, 1 + 2 * (kappa + 2), kappa + 2)
    diag["objective_coeffs"] = list(coeffs)
    diag["objective_exponents"] = list(exponents)
    bracket = (0.05 * sigma_x, 20.0 * sigma_x)
    try:
        H = minimize_ce_objective(coeffs, exponents, bracket)
    except MonotoneObjectiveError:
        return _fallback("objective monotone on the search bracket")
    value = H * n ** (-1.0 / (kappa + 3))
    diag["H"] = H
    diag["objective_value"] = abs(
        coeffs[0] * H ** exponents[0]
        + coeffs[1] * H ** exponents[1]
        + coeffs[2] * H ** exponents[2]
    )
    return BandwidthChoice(value=float(value), rule="dpi", diagnostics=diag)


# ----------------------------------------------------------------------
# local polynomial: pilots
# ----------------------------------------------------------------------

def _global_poly_fit(sample: RegressionSample, degree: int):
    """OLS of Y on raw powers 0..degree of X; returns (gamma, sigma2_hat)."""
    n = sample.n
    if n <= degree + 1:
        raise SingularDesignError(
            f"global degree-{degree} fit needs more than {degree + 1} observations"
        )
    V = np.vander(sample.x_values, N=degree + 1, increasing=True)
    gamma, _res, rank, _sv = np.linalg.lstsq(V, sample.y_values, rcond=None)
    if rank < degree + 1:
        raise SingularDesignError("global polynomial design is rank deficient")
    resid = sample.y_values - V @ gamma
    dof = max(1, n - (degree + 1))
    return gamma, float(resid @ resid / dof)


def global_poly_derivative(sample: RegressionSample, k: int, x: float) -> float:
    """m^(k)(x) from a global polynomial fit of degree k+2.

    The k-th derivative of the fitted degree-(k+2) polynomial is the
    quadratic gamma_{k} k! + gamma_{k+1} (k+1)! x + gamma_{k+2} ((k+2)!/2) x^2
    (0-based coefficient indices), evaluated exactly.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    if sample.n <= k + 6:
        raise SingularDesignError(f"need n > {k + 6} observations for k = {k}")
    gamma, _s2 = _global_poly_fit(sample, k + 2)
    out = 0.0
    for j in range(k, k + 3):
        out += gamma[j] * math.factorial(j) / math.factorial(j - k) * x ** (j - k)
    return float(out)


def _lp_kernel_constants(K: KernelSpec, p: int, trunc: TruncatedSupport | None):
    """Asymptotic variance and bias constants; integrals can be truncated."""
    S = np.empty((p + 1, p + 1))
    T = np.empty((p + 1, p + 1))
    c = np.empty(p + 1)
    for i in range(p + 1):
        c[i] = K.power_weighted_integral(p + 1 + i, 1, trunc)
        for j in range(i, p + 1):
            S[i, j] = S[j, i] = K.power_weighted_integral(i + j, 1, trunc)
            T[i, j] = T[j, i] = K.power_weighted_integral(i + j, 2, trunc)
    S_inv = np.linalg.inv(S)
    V = float(S_inv[0] @ T @ S_inv[0])
    B = float(S_inv[0] @ c)
    return V, B


def _boundary_trunc(sample: RegressionSample, x: float) -> TruncatedSupport:
    """Half-support on the side where the data lives relative to x."""
    left_gap = x - sample.x_values[0]
    right_gap = sample.x_values[-1] - x
    if left_gap <= right_gap:
        return TruncatedSupport(0.0, 1.0)  # left boundary: (X - x)/h >= 0
    return TruncatedSupport(-1.0, 0.0)


def mse_bandwidth_lp(
    sample: RegressionSample,
    x: float,
    p: int,
    K: KernelSpec,
    boundary: bool = False,
) -> BandwidthChoice:
    """Plug-in MSE-optimal local polynomial bandwidth at x.

    Pilots: m^(p+1)(x) and the residual variance from a global polynomial
    fit of degree p+3, and a Silverman-bandwidth kernel density estimate
    for f_X(x).  The kernel constants are integrated over the half
    support when ``boundary`` is set.
    """
    n = sample.n
    m_deriv = global_poly_derivative(sample, p + 1, x)
    _gamma, sigma2 = _global_poly_fit(sample, p + 3)
    xs = DensitySample(sample.x_values)
    h_f = silverman_rot_density(xs, 2)
    if h_f.diagnostics.get("invalid"):
        raise ZeroCurvatureError("covariates carry no variation")
    f_x = density_point_estimate(xs, x, h_f.value, kernel("epanechnikov"))
    if f_x <= 1e-12:
        raise ZeroCurvatureError(f"design density estimate vanished at x = {x}")
    trunc = _boundary_trunc(sample, x) if boundary else None
    V, B = _lp_kernel_constants(K, p, trunc)
    scale = max(1.0, float(np.max(np.abs(sample.y_values))))
    if abs(m_deriv) < 1e-10 * scale or abs(B) < 1e-14:
        raise ZeroCurvatureError(f"pilot m^({p + 1})({x}) vanishes; MSE bandwidth undefined")
    num = sigma2 * V * math.factorial(p + 1) ** 2
    den = 2.0 * (p + 1) * n * f_x * (m_deriv * B) ** 2
    return BandwidthChoice(
        value=float((num / den) ** (1.0 / (2 * p + 3))),
        rule="mse-normal-ref",
        diagnostics={
            "m_deriv": m_deriv,
            "sigma2": sigma2,
            "f_x": f_x,
            "V": V,
            "B": B,
            "boundary": boundary,
            "pilot": "global-poly degree p+3, Silverman KDE for f_X",
        },
    )


# ----------------------------------------------------------------------
# local polynomial: direct plug-in
# ----------------------------------------------------------------------

def pairwise_ustat_mean(g: np.ndarray, h: np.ndarray) -> float:
    """Mean of g_i * h_j over ordered pairs i != j."""
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    n = g.size
    if n < 2:
        raise ValueError("need at least two observations")
    return float((g.sum() * h.sum() - g @ h) / (n * (n - 1)))


def _lambda_vector(fit: LocPolyFit, k: int) -> np.ndarray:
    """Design moment Lambda_{p,k} = R' W [u^(p+k)] / n from a fit."""
    m = fit.in_window
    n = fit.u.size
    w = fit.kvals[m] / fit.h
    return fit.basis[m].T @ (w * fit.u[m] ** (fit.p + k)) / n


def _edgeworth_q_hats(fit: LocPolyFit, eps: np.ndarray, z: float):
    """Sample analogues of the coverage-error polynomials from one fit.

    ``fit`` is the degree-q pilot fit (with the recommended q = p+1,
    K = L, rho = 1 the RBC polynomials equal the undersmoothing ones at
    degree q); ``eps`` are the degree-p pilot residuals.  Expectations
    over one observation become sample means; expectations over pairs and
    triples become second- and third-order U-statistic averages over
    distinct indices (the triple sum in factorized O(n^2) form).
    Conditional variances v(X_i) use the HC0 plug-in eps_i^2, under which
    the E[l0^4 (eps^4 - v^2)] term vanishes identically; it is kept for
    completeness.
    """
    n = fit.u.size
    h = fit.h
    R = fit.basis
    kv = fit.kvals  # zero off-window
    ginv = fit.g_inv
    e2 = eps**2

    l0 = kv * (R @ ginv[0])
    sig2 = float(l0**2 @ e2 / (n * h))
    if sig2 <= 0:
        return None

    lev_raw = np.einsum("ij,jk,ik->i", R, ginv, R)  # r_i' G^-1 r_i
    A1 = float(l0**3 @ eps**3 / (n * h))
    # l1(X_i, X_i) = h l0_i - l0_i K_i r_i' G^-1 r_i
    l1_diag = h * l0 - l0 * kv * lev_raw
    A2 = float((l0 * l1_diag) @ e2 / (n * h))
    A3 = 0.0  # E[l0^4 (eps^4 - v^2)] with v_hat = eps^2
    A4 = float((l0**2 * kv * lev_raw) @ e2 / (n * h))
    vec1 = R.T @ (l0**3 * eps**3) / (n * h)
    vec2 = R.T @ (kv * l0 * e2) / (n * h)
    A5 = float(vec1 @ ginv @ vec2)

    # pairwise and triple terms on full n x n products
    B = R @ ginv @ R.T
    C = B * kv[None, :]  # C[i, j] = K_j r_i' G^-1 r_j
    pair_norm = n * (n - 1)
    g_i = l0**2
    t_j = e2
    C2 = C**2
    full6 = g_i @ C2 @ t_j
    diag6 = float(np.sum(g_i * np.diag(C2) * t_j))
    A6 = (full6 - diag6) / (pair_norm * h**2)

    # bmat[j, i] = K_i (r_j' G^-1 r_i) l0_i e_i^2 = C[j, i] l0_i e_i^2
    bmat = C * (l0 * e2)[None, :]
    row_sum = bmat.sum(axis=1) - np.diag(bmat)
    row_sq = (bmat**2).sum(axis=1) - np.diag(bmat) ** 2
    triple_norm = n * (n - 1) * (n - 2)
    A7 = float(l0**2 @ (row_sum**2 - row_sq)) / (triple_norm * h**3)

    A8 = float(l0**4 @ eps**4 / (n * h))
    center = float(l0**2 @ e2 / n)  # E[l0^2 v]
    D = l0**2 * e2 - center
    A9 = float(D @ (l0**2 * e2) / (n * h))

    # L1[i, j] = h l0_i - l0_j C[j, i]
    L1 = h * l0[:, None] - C.T * l0[None, :]
    a_vec = l0 * e2  # l0_i v_hat_i and l0_i eps_i^2 coincide under HC0
    g_vec = l0**2 * e2
    tot10 = float(a_vec @ L1 @ g_vec) - float(np.sum(a_vec * np.diag(L1) * g_vec))
    A10 = tot10 / (pair_norm * h**2)
    gt_vec = g_vec - center
    tot11 = float(a_vec @ L1 @ gt_vec) - float(np.sum(a_vec * np.diag(L1) * gt_vec))
    A11 = tot11 / (pair_norm * h**2)
    A12 = float(D @ D / (n * h))

    s2 = 1.0 / sig2**2
    s4 = s2 * s2
    s6 = s4 * s2
    q1 = 2.0 * (
        s6 * A1**2 * (z**3 / 3.0 + 7.0 * z / 4.0 + sig2 * z * (z**2 - 3.0) / 4.0)
        + s2 * A2 * (-z * (z**2 - 3.0) / 2.0)
        + s4 * A3 * (z * (z**2 - 3.0) / 8.0)
        - s2 * A4 * (z * (z**2 - 1.0) / 2.0)
        - s4 * A5 * (z * (z**2 - 1.0))
        + s2 * A6 * (z * (z**2 - 1.0) / 4.0)
        + s4 * A7 * (z * (z**2 - 1.0) / 2.0)
        + s4 * A8 * (-z * (z**2 - 3.0) / 24.0)
        + s4 * A9 * (z * (z**2 - 1.0) / 4.0)
        + s4 * A10 * (z * (z**2 - 3.0))
        + s4 * A11 * (-z)
        + s4 * A12 * (-z * (z**2 + 1.0) / 8.0)
    )
    q2 = -s2 * sig2 * z  # = -z / sig2
    q3 = s4 * A1 * (2.0 * z**3 / 3.0)
    terms = {
        "A1": A1, "A2": A2, "A3": A3, "A4": A4, "A5": A5, "A6": A6,
        "A7": A7, "A8": A8, "A9": A9, "A10": A10, "A11": A11, "A12": A12,
        "sigma2": sig2,
    }
    return q1, q2, q3, terms


def dpi_bandwidth_lp(
    sample: RegressionSample,
    x: float,
    p: int,
    boundary_flag: bool,
    K: KernelSpec,
    alpha: float = 0.05,
    method: VarianceMethod | None = None,
) -> BandwidthChoice:
    """Direct plug-in coverage-error-optimal bandwidth for RBC local polynomials.

    Follows the recommended configuration K = L, rho = 1, q = p + 1:
    (1) MSE pilot bandwidth; (2) degree-p pilot residuals; (3) m^(p+2)
    and m^(p+3) from global polynomial fits; (4) plug-in coverage-error
    polynomials and bias constants from the pilot fits; (5) minimize the
    squared objective and rescale by n^(-1/(p+4)) (interior) or
    n^(-1/(p+3)) (boundary).  Falls back to the rule-of-thumb rescaling
    (flagged) when a pilot degenerates or the objective is monotone.
    """
    n = sample.n
    q = p + 1
    diag: dict = {"boundary": boundary_flag}
    if method is not None:
        diag["variance_method"] = method.kind

    def _scale_fallback(reason: str) -> BandwidthChoice:
        sigma_x = float(np.std(sample.x_values, ddof=1))
        rate = -1.0 / (p + 3) if boundary_flag else -1.0 / (p + 4)
        d = dict(diag)
        d.update({"fallback": True, "fallback_reason": reason, "pilot": "scale"})
        return BandwidthChoice(value=2.34 * sigma_x * n**rate, rule="dpi", diagnostics=d)

    try:
        h_mse = mse_bandwidth_lp(sample, x, p, K, boundary=boundary_flag)
    except (ZeroCurvatureError, SingularDesignError) as exc:
        return _scale_fallback(f"mse pilot failed: {exc}")
    diag["h_mse"] = h_mse.value

    def _rot_fallback(reason: str) -> BandwidthChoice:
        context = "lp-boundary" if boundary_flag else "lp-interior"
        rot = rot_bandwidth(h_mse.value, context, p, n)
        d = dict(diag)
        d.update(rot.diagnostics)
        d.update({"fallback": True, "fallback_reason": reason})
        return BandwidthChoice(value=rot.value, rule="dpi", diagnostics=d)

    try:
        fit_p = lp_fit(sample, x, p, h_mse.value, K)
        fit_q = lp_fit(sample, x, q, h_mse.value, K)
    except SingularDesignError as exc:
        return _rot_fallback(f"pilot fit failed: {exc}")
    eps = fit_p.residuals

    try:
        m_p2 = global_poly_derivative(sample, p + 2, x)
        m_p3 = global_poly_derivative(sample, p + 3, x) if not boundary_flag else 0.0
    except SingularDesignError as exc:
        return _rot_fallback(f"global derivative pilot failed: {exc}")

    z = float(ndtri(1.0 - alpha / 2.0))
    qhat = _edgeworth_q_hats(fit_q, eps, z)
    if qhat is None:
        return _rot_fallback("pilot residual variance vanished")
    q1, q2, q3, terms = qhat
    diag["q_hats"] = {"q1": q1, "q2": q2, "q3": q3}

    # bias constants from the sampled design moments at the pilot bandwidth
    lam_p1 = fit_p.Lambda1
    lam_p2 = _lambda_vector(fit_p, 2)
    g0p = fit_p.g_inv[0]
    gq_row = fit_q.g_inv[p + 1]
    lam_q1 = fit_q.Lambda1
    core2 = float(g0p @ (lam_p2 - lam_p1 * float(gq_row @ lam_q1)))
    if boundary_flag:
        eta = m_p2 / math.factorial(p + 2) * core2
        exponents = (-1, 1 + 2 * (p + 2), p + 2)
        rate = -1.0 / (p + 3)
    else:
        lam_p3 = _lambda_vector(fit_p, 3)
        lam_q2 = _lambda_vector(fit_q, 2)
        core3 = float(g0p @ (lam_p3 - lam_p1 * float(gq_row @ lam_q2)))
        eta = (
            m_p2 / math.factorial(p + 2) * core2
            + m_p3 / math.factorial(p + 3) * core3
        )
        exponents = (-1, 1 + 2 * (p + 3), p + 3)
        rate = -1.0 / (p + 4)
    diag["eta_bc"] = eta
    y_scale = max(1.0, float(np.max(np.abs(sample.y_values))))
    if not np.isfinite(eta) or abs(eta) < 1e-12 * y_scale:
        return _rot_fallback("plug-in bias constant vanished")

    coeffs = (q1, eta**2 * q2, eta * q3)
    if not all(np.isfinite(coeffs)):
        return _rot_fallback("non-finite objective coefficients")
    diag["objective_coeffs"] = list(coeffs)
    diag["objective_exponents"] = list(exponents)
    sigma_x = float(np.std(sample.x_values, ddof=1))
    bracket = (0.05 * sigma_x, 20.0 * sigma_x)
    try:
        H = minimize_ce_objective(coeffs, exponents, bracket)
    except MonotoneObjectiveError:
        return _rot_fallback("objective monotone on the search bracket")
    diag["H"] = H
    return BandwidthChoice(value=float(H * n**rate), rule="dpi", diagnostics=diag)
