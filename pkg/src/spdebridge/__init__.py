"""Spectral simulation and change-of-measure toolkit for semilinear SPDEs."""

from ._kernels import BACKEND
from .errors import DomainError
from .forward import (
    Nonlinearity,
    Path,
    PathEnsemble,
    apply_nonlinearity,
    bounded_rational,
    exponential_euler_step,
    forward_snapshots,
    linear_scale,
    replay_path,
    sample_stationary,
    simulate_ensemble,
    simulate_path,
    sine_nemytskii,
    zero,
)
from .grids import TimeGrid, geometric_grid, uniform_grid
from .guided import (
    GaussianTilt,
    GuidedSpec,
    WeightedPath,
    effective_sample_size,
    endpoint_sampler_bridge,
    endpoint_sampler_tilted,
    conditioned_snapshots,
    sample_conditioned,
    self_normalized_estimate,
    simulate_guided,
)
from .htransform import (
    ExpTestFunction,
    HFunction,
    bridge_h,
    constant_h,
    dynkin_residual,
    exp_martingale_from_definition,
    exp_martingale_from_girsanov,
    l0_exp_test,
    lipschitz_probe,
    noisy_obs_h,
    novikov_estimate,
)
from .ou import (
    GaussianLaw,
    chapman_kolmogorov_residual,
    grad_log_ptilde,
    guided_drift,
    log_h_noisy_obs,
    log_ptilde,
    ou_bridge_exact_sample,
    ou_transition,
    bridge_marginal_mean_var,
)
from .spectral import (
    DiagonalOperator,
    SpectralModel,
    covariance_qinf,
    covariance_qt,
    dirichlet_model,
    gamma_apply,
    gamma_hs_norm_sq,
    semigroup_apply,
    synthesize_on_grid,
    analyze_from_grid,
)

__version__ = "0.1.0"
