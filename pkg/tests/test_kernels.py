import numpy as np
import pytest
from numpy.testing import assert_allclose

from npinfer import (
    FULL_SUPPORT,
    TruncatedSupport,
    custom_kernel,
    eval_kernel,
    induced_kernel,
    induced_kernel_M,
    kernel,
    kernel_derivative,
    kernel_moment_mu,
    kernel_moment_theta,
    kernel_names,
    minvar_derivative_kernel,
)

LEVEL_KERNELS = ["uniform", "triangular", "epanechnikov", "minvar-order4", "mseopt-order4"]
ALL_KERNELS = LEVEL_KERNELS + ["minvar-deriv2", "mseopt-deriv2"]


def gl_mu(spec, k, trunc=None):
    """64-node Gauss-Legendre oracle, integrated piece by piece."""
    import math

    lo, hi = spec.support
    if trunc is not None:
        lo, hi = max(lo, trunc.lower), min(hi, trunc.upper)
    x, w = np.polynomial.legendre.leggauss(64)
    total = 0.0
    breaks = sorted({float(p[0]) for p in spec.pieces} | {float(p[1]) for p in spec.pieces} | {lo, hi})
    breaks = [b for b in breaks if lo - 1e-15 <= b <= hi + 1e-15]
    for a, b in zip(breaks[:-1], breaks[1:]):
        u = 0.5 * (b - a) * x + 0.5 * (a + b)
        total += 0.5 * (b - a) * np.sum(w * u**k * spec.eval_many(u))
    return (-1) ** k / math.factorial(k) * total


def gl_theta(spec, k, trunc=None):
    lo, hi = spec.support
    if trunc is not None:
        lo, hi = max(lo, trunc.lower), min(hi, trunc.upper)
    x, w = np.polynomial.legendre.leggauss(64)
    total = 0.0
    breaks = sorted({float(p[0]) for p in spec.pieces} | {float(p[1]) for p in spec.pieces} | {lo, hi})
    breaks = [b for b in breaks if lo - 1e-15 <= b <= hi + 1e-15]
    for a, b in zip(breaks[:-1], breaks[1:]):
        u = 0.5 * (b - a) * x + 0.5 * (a + b)
        total += 0.5 * (b - a) * np.sum(w * spec.eval_many(u) ** k)
    return total


class TestEval:
    def test_epanechnikov_center(self):
        assert eval_kernel(kernel("epanechnikov"), 0.0) == 0.75

    def test_outside_support_is_exact_zero(self):
        assert eval_kernel(kernel("epanechnikov"), 1.5) == 0.0
        assert eval_kernel(kernel("epanechnikov"), -1.0001) == 0.0

    def test_minvar_deriv2_center(self):
        assert eval_kernel(kernel("minvar-deriv2"), 0.0) == -3.75

    def test_triangular_shape(self):
        tri = kernel("triangular")
        for u in [-0.75, -0.2, 0.0, 0.3, 1.0]:
            assert tri(u) == pytest.approx(1 - abs(u), abs=0)

    def test_vectorized_matches_scalar(self):
        spec = kernel("mseopt-order4")
        u = np.linspace(-1.3, 1.3, 57)
        assert_allclose(spec.eval_many(u), [spec(v) for v in u], rtol=0, atol=0)


class TestMoments:
    def test_epanechnikov_mu2(self):
        assert kernel_moment_mu(kernel("epanechnikov"), 2) == pytest.approx(0.1, abs=1e-15)

    def test_epanechnikov_mu1_zero(self):
        assert kernel_moment_mu(kernel("epanechnikov"), 1) == 0.0

    def test_uniform_mu2(self):
        assert kernel_moment_mu(kernel("uniform"), 2) == pytest.approx(1 / 6, abs=1e-15)

    def test_epanechnikov_thetas(self):
        epa = kernel("epanechnikov")
        assert kernel_moment_theta(epa, 2) == pytest.approx(0.6, abs=1e-15)
        assert kernel_moment_theta(epa, 3) == pytest.approx(27 / 70, abs=1e-15)
        assert kernel_moment_theta(epa, 4) == pytest.approx(9 / 35, abs=1e-15)

    @pytest.mark.parametrize("name", LEVEL_KERNELS)
    def test_level_kernels_integrate_to_one(self, name):
        assert abs(kernel_moment_mu(kernel(name), 0) - 1.0) < 1e-14

    @pytest.mark.parametrize("name", ALL_KERNELS)
    @pytest.mark.parametrize("j", [1, 3, 5, 7])
    def test_odd_moments_vanish(self, name, j):
        assert abs(kernel_moment_mu(kernel(name), j)) < 1e-14

    @pytest.mark.parametrize("name", LEVEL_KERNELS)
    def test_kernel_order(self, name):
        spec = kernel(name)
        for j in range(1, spec.kappa):
            assert abs(kernel_moment_mu(spec, j)) < 1e-14
        assert abs(kernel_moment_mu(spec, spec.kappa)) > 1e-6

    @pytest.mark.parametrize("name", ALL_KERNELS)
    @pytest.mark.parametrize("k", [0, 1, 2, 3, 4, 5, 6])
    def test_mu_against_quadrature_oracle(self, name, k):
        spec = kernel(name)
        assert kernel_moment_mu(spec, k) == pytest.approx(gl_mu(spec, k), abs=1e-10)

    @pytest.mark.parametrize("name", ALL_KERNELS)
    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 6])
    def test_theta_against_quadrature_oracle(self, name, k):
        spec = kernel(name)
        assert kernel_moment_theta(spec, k) == pytest.approx(gl_theta(spec, k), abs=1e-10)

    def test_truncated_odd_moment_survives(self):
        trunc = TruncatedSupport(0.0, 1.0)
        epa = kernel("epanechnikov")
        val = kernel_moment_mu(epa, 1, trunc)
        assert abs(val) > 1e-3
        assert val == pytest.approx(gl_mu(epa, 1, trunc), abs=1e-12)

    def test_truncated_support_validation(self):
        with pytest.raises(ValueError):
            TruncatedSupport(0.5, 1.0)
        with pytest.raises(ValueError):
            TruncatedSupport(-1.0, 1.5)


class TestDerivative:
    def test_second_derivative_of_epanechnikov(self):
        assert kernel_derivative(kernel("epanechnikov"), 2, 0.5) == -1.5

    def test_zeroth_derivative_is_identity(self):
        spec = kernel("mseopt-order4")
        for u in [-0.9, 0.0, 0.4]:
            assert kernel_derivative(spec, 0, u) == eval_kernel(spec, u)

    def test_uniform_first_derivative(self):
        assert kernel_derivative(kernel("uniform"), 1, 0.5) == 0.0

    def test_outside_support(self):
        assert kernel_derivative(kernel("epanechnikov"), 1, 2.0) == 0.0

    def test_finite_difference_oracle(self):
        spec = kernel("mseopt-deriv2")
        eps = 1e-6
        for u in [-0.6, -0.1, 0.3, 0.8]:
            fd = (spec(u + eps) - spec(u - eps)) / (2 * eps)
            assert kernel_derivative(spec, 1, u) == pytest.approx(fd, abs=1e-5)


class TestInducedKernel:
    def test_minimum_variance_identity(self):
        # uniform K with the minimum-variance second-derivative kernel at
        # rho = 1 reproduces the fourth-order minimum variance kernel
        u = np.linspace(-1, 1, 1001)
        vals = induced_kernel_M(kernel("uniform"), kernel("minvar-deriv2"), 2, 1.0, u)
        target = (3.0 / 8.0) * (3.0 - 5.0 * u**2)
        assert np.max(np.abs(vals - target)) < 1e-12

    def test_rho_zero_returns_k(self):
        epa = kernel("epanechnikov")
        for u in [-0.8, 0.0, 0.3, 0.99]:
            assert induced_kernel_M(epa, kernel("mseopt-deriv2"), 2, 0.0, u) == epa(u)

    def test_direct_substitution_at_zero(self):
        val = induced_kernel_M(kernel("epanechnikov"), kernel("minvar-deriv2"), 2, 1.0, 0.0)
        assert val == pytest.approx(0.75 - 0.1 * (-3.75), abs=1e-15)

    def test_rejects_negative_rho(self):
        with pytest.raises(ValueError):
            induced_kernel(kernel("epanechnikov"), kernel("minvar-deriv2"), 2, -0.5)

    def test_level_bias_kernel_is_differentiated(self):
        # a level kernel used as L gets differentiated kappa times
        epa = kernel("epanechnikov")
        m = induced_kernel(epa, epa, 2, 1.0)
        # L'' of epanechnikov is -3/2 on the support
        expected = epa(0.3) - 1.0 * 0.1 * (-1.5)
        assert m(0.3) == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
    def test_support_scales_with_rho(self, rho):
        m = induced_kernel(kernel("epanechnikov"), kernel("mseopt-deriv2"), 2, rho)
        hi = max(1.0, 1.0 / rho)
        assert m.support == (pytest.approx(-hi), pytest.approx(hi))
        assert m(hi + 1e-9) == 0.0

    @pytest.mark.parametrize("rho", [0.5, 1.0, 1.7])
    def test_induced_moments_vs_quadrature(self, rho):
        m = induced_kernel(kernel("epanechnikov"), kernel("mseopt-deriv2"), 2, rho)
        for k in [2, 3, 4]:
            assert m.moment_theta(k) == pytest.approx(gl_theta(m, k), abs=1e-10)
        assert m.moment_mu(4) == pytest.approx(gl_mu(m, 4), abs=1e-10)

    def test_mu4_closed_form(self):
        # mu_{M,4} = mu_{K,4} - rho^{-2} mu_{K,2} mu_{L,2} with
        # mu_{L,2} read off the stored derivative kernel's (kappa+2)-moment
        K = kernel("epanechnikov")
        J = kernel("mseopt-deriv2")
        for rho in [0.5, 1.0, 2.0]:
            m = induced_kernel(K, J, 2, rho)
            expect = K.moment_mu(4) - rho**-2 * K.moment_mu(2) * J.moment_mu(4)
            assert m.moment_mu(4) == pytest.approx(expect, rel=1e-12)


class TestCustomKernels:
    def test_valid_custom(self):
        spec = custom_kernel([0.75, 0, -0.75], kappa=2)
        assert spec(0.2) == pytest.approx(0.75 * (1 - 0.04), abs=1e-15)

    def test_normalization_enforced(self):
        with pytest.raises(ValueError):
            custom_kernel([0.8, 0, -0.75], kappa=2)

    def test_custom_derivative_kernel(self):
        spec = custom_kernel([-3.75, 0, 11.25], kappa=2, derivative_target=2)
        assert spec(0.0) == -3.75

    def test_minvar_derivative_builder_matches_builtin(self):
        built = minvar_derivative_kernel(2)
        ref = kernel("minvar-deriv2")
        u = np.linspace(-1, 1, 101)
        assert_allclose(built.eval_many(u), ref.eval_many(u), atol=1e-12)

    def test_minvar_deriv4_moments(self):
        j4 = minvar_derivative_kernel(4)
        assert j4.moment_mu(0) == pytest.approx(0.0, abs=1e-14)
        assert j4.moment_mu(2) == pytest.approx(0.0, abs=1e-14)
        assert j4.moment_mu(4) == pytest.approx(1.0, abs=1e-14)


def test_kernel_names_and_aliases():
    assert "epanechnikov" in kernel_names()
    assert kernel("EPANECHNIKOV").name == "epanechnikov"
    assert kernel("minvar_deriv2").name == "minvar-deriv2"
    with pytest.raises(ValueError):
        kernel("gaussian")
