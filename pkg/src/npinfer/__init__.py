"""Nonparametric point estimation with robust bias-corrected inference.

Kernel density estimation and local polynomial regression with
undersmoothed (US), bias-corrected (BC), and robust bias-corrected (RBC)
confidence intervals, coverage-error-optimal bandwidth selectors, and a
reproducible Monte Carlo engine.
"""

from .errors import (
    DegenerateSampleError,
    LeverageOneError,
    MonotoneObjectiveError,
    NpinferError,
    ParseError,
    SchemaError,
    SingularDesignError,
    ZeroCurvatureError,
)
from .kernels import (
    FULL_SUPPORT,
    KernelSpec,
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
from .density import (
    ConfidenceInterval,
    DensityInference,
    DensitySample,
    density_bias_estimate,
    density_derivative_estimate,
    density_infer,
    density_point_estimate,
    density_variance_rbc,
    density_variance_us,
    gj_density_estimate,
    gj_equivalent_kernel,
)
from .locpoly import (
    LocPolyFit,
    LocPolyInference,
    RegressionSample,
    VarianceMethod,
    lp_bias_estimate,
    lp_fit,
    lp_infer,
    lp_residual_weights,
    lp_variance_rbc,
    lp_variance_us,
)
from .bandwidth import (
    BandwidthChoice,
    CoveragePolys,
    coverage_polys_density,
    dpi_bandwidth_density,
    dpi_bandwidth_lp,
    global_poly_derivative,
    minimize_ce_objective,
    mse_bandwidth_density_normal_ref,
    mse_bandwidth_lp,
    population_mse_bandwidth_density,
    rot_bandwidth,
    silverman_rot_density,
)
from .simulate import (
    DENSITY_MODELS,
    REGRESSION_MODELS,
    DensityModel,
    McConfig,
    McReport,
    RegressionModel,
    bandwidth_grid_sweep,
    gen_density_sample,
    gen_regression_sample,
    run_mc,
)

__version__ = "0.1.0"
