"""Closed-form Gaussian analytics for the linear (zero-drift) process.

Transition laws, transition densities relative to the invariant measure,
their gradients (the guiding drift), exact bridge sampling by sequential
Gaussian conditioning, and noisy-observation variants. Densities are kept
as per-mode ratios against the invariant measure so they stay well scaled
as the mode count grows.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_hermite

from . import rng
from .errors import DomainError
from .forward import Path, PathEnsemble, model_id
from .grids import TimeGrid
from .spectral import (
    DiagonalOperator,
    SpectralModel,
    covariance_qt,
    covariance_qt_diag,
    gamma_diag,
    one_minus_exp,
    semigroup_apply,
)

_REL_HORIZON_FLOOR = 1e-10


@dataclass(frozen=True)
class GaussianLaw:
    """Product Gaussian law on the truncated state space."""

    mean: np.ndarray
    var: DiagonalOperator


def ou_transition(model: SpectralModel, s: float, x, t: float) -> GaussianLaw:
    """Law of the zero-drift process at time t started from x at time s < t."""
    if t <= s:
        raise DomainError("transition requires t > s")
    return GaussianLaw(semigroup_apply(model, t - s, x), covariance_qt(model, t - s))


def _lag(t: float, horizon: float, r_min: float | None) -> float:
    r = horizon - t
    if r <= 0.0:
        raise DomainError("time must lie strictly before the horizon")
    if r_min is None:
        r_min = _REL_HORIZON_FLOOR * horizon
    if r < r_min:
        raise DomainError("density evaluation too close to horizon")
    return r


def log_ptilde(
    model: SpectralModel,
    t: float,
    x,
    horizon: float,
    y,
    route: str = "density_ratio",
    r_min: float | None = None,
):
    """Log transition density relative to the invariant measure.

    Two independent evaluation routes are exposed for cross-checking:
    "density_ratio" sums per-mode Gaussian log-density differences;
    "cameron_martin" uses the whitened-semigroup inner-product form plus the
    x-independent ratio at the origin. Both accept a batch of states x with
    shape (..., J) and return the matching leading shape.
    """
    x = model.validate_field(x)
    y = model.validate_field(y)
    r = _lag(t, horizon, r_min)
    qr = covariance_qt_diag(model, r)
    if np.any(qr <= 0.0) or not np.all(np.isfinite(1.0 / qr)):
        raise DomainError("density evaluation too close to horizon")
    qinf = model.q / (2.0 * np.abs(model.lam))
    log_var_ratio = np.log(one_minus_exp(2.0 * model.lam * r))
    if route == "density_ratio":
        mean = np.exp(model.lam * r) * x
        per_mode = (
            -0.5 * log_var_ratio
            - (y - mean) ** 2 / (2.0 * qr)
            + y**2 / (2.0 * qinf)
        )
    elif route == "cameron_martin":
        g = gamma_diag(model, r)
        cm = (g * y / np.sqrt(qr)) * x - 0.5 * (g * x) ** 2
        ratio_at_origin = -0.5 * log_var_ratio - 0.5 * (y * g) ** 2
        per_mode = cm + ratio_at_origin
    else:
        raise DomainError(f"unknown route {route!r}")
    return np.sum(per_mode, axis=-1)


def grad_log_ptilde(
    model: SpectralModel,
    t: float,
    x,
    horizon: float,
    y,
    r_min: float | None = None,
) -> np.ndarray:
    """Gradient in x of log_ptilde: exp(lam r)(y - exp(lam r) x) / q_r per mode."""
    x = model.validate_field(x)
    y = model.validate_field(y)
    r = _lag(t, horizon, r_min)
    qr = covariance_qt_diag(model, r)
    elr = np.exp(model.lam * r)
    return elr * (y - elr * x) / qr


def guided_drift(model: SpectralModel, t: float, horizon: float, y, x) -> np.ndarray:
    """Drift increment added by the transition-density transform: Q grad log."""
    return model.q * grad_log_ptilde(model, t, x, horizon, y)


# ---------------------------------------------------------------------------
# exact bridge by sequential Gaussian conditioning
# ---------------------------------------------------------------------------


def _conditional_coeffs(model: SpectralModel, a: float, b: float):
    """Per-mode mean coefficients and variance of Z(s+a) given Z(s), Z(s+a+b).

    mean = ca * z + cy * y, variance = v, with v = q_a q_b / q_{a+b}.
    """
    qa = covariance_qt_diag(model, a)
    if b <= 0.0:
        n = model.n_modes
        return np.zeros(n), np.ones(n), np.zeros(n)
    qb = covariance_qt_diag(model, b)
    ea = np.exp(model.lam * a)
    eb = np.exp(model.lam * b)
    qab = qb + eb**2 * qa
    return ea * qb / qab, eb * qa / qab, qa * qb / qab


def bridge_marginal_mean_var(
    model: SpectralModel, x0, horizon: float, y, t: float
):
    """Closed-form per-mode mean and variance of the pinned process at time t."""
    x0 = model.validate_field(x0)
    y = model.validate_field(y)
    if not (0.0 <= t <= horizon):
        raise DomainError("t must lie in [0, horizon]")
    if t == 0.0:
        return x0.copy(), np.zeros(model.n_modes)
    ca, cy, v = _conditional_coeffs(model, t, horizon - t)
    return ca * x0 + cy * y, v


def _check_bridge_grid(grid: TimeGrid, horizon: float):
    if abs(grid.horizon - horizon) > 1e-12 * max(1.0, abs(horizon)):
        raise DomainError("grid horizon does not match the bridge horizon")


def ou_bridge_states(
    model: SpectralModel, x0, horizon: float, y, grid: TimeGrid, z: np.ndarray
) -> np.ndarray:
    """Drive the bridge recursion with given standard normals z (..., steps, J)."""
    x0 = model.validate_field(x0)
    y = model.validate_field(y)
    _check_bridge_grid(grid, horizon)
    nodes = grid.nodes
    lead = z.shape[:-2]
    states = np.empty(lead + (nodes.size, model.n_modes))
    states[..., 0, :] = x0
    x = np.broadcast_to(x0, lead + (model.n_modes,)).copy()
    for k in range(grid.n_steps):
        a = nodes[k + 1] - nodes[k]
        b = horizon - nodes[k + 1]
        ca, cy, v = _conditional_coeffs(model, a, b)
        x = ca * x + cy * y + np.sqrt(v) * z[..., k, :]
        states[..., k + 1, :] = x
    return states


def ou_bridge_exact_sample(
    model: SpectralModel,
    x0,
    horizon: float,
    y,
    grid: TimeGrid,
    rng_seed,
    *,
    path_index: int = 0,
) -> Path:
    """Exact sample of the pinned zero-drift process; final state equals y."""
    z = rng.path_increments(rng_seed, [path_index], grid.n_steps, model.n_modes)[0]
    states = ou_bridge_states(model, x0, horizon, y, grid, z)
    return Path(grid, states, z, model_id(model))


def ou_bridge_ensemble(
    model: SpectralModel,
    x0,
    horizon: float,
    y,
    grid: TimeGrid,
    rng_seed,
    n_paths: int,
) -> PathEnsemble:
    z = rng.path_increments(rng_seed, range(n_paths), grid.n_steps, model.n_modes)
    states = ou_bridge_states(model, x0, horizon, y, grid, z)
    return PathEnsemble(grid, states, z, model_id(model))


def ou_bridge_snapshots(
    model: SpectralModel,
    x0,
    horizon: float,
    y,
    grid: TimeGrid,
    rng_seed,
    n_paths: int,
    snap_nodes,
    chunk: int = 4096,
) -> np.ndarray:
    """Bridge states at selected nodes for a large ensemble (no full storage)."""
    x0 = model.validate_field(x0)
    y = model.validate_field(y)
    _check_bridge_grid(grid, horizon)
    snap_nodes = np.asarray(snap_nodes, dtype=np.int64)
    slot = np.full(grid.n_steps + 1, -1, dtype=np.int64)
    slot[snap_nodes] = np.arange(snap_nodes.size)
    nodes = grid.nodes
    coeffs = [
        _conditional_coeffs(model, nodes[k + 1] - nodes[k], horizon - nodes[k + 1])
        for k in range(grid.n_steps)
    ]
    out = np.empty((n_paths, snap_nodes.size, model.n_modes))
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        z = rng.path_increments(rng_seed, range(lo, hi), grid.n_steps, model.n_modes)
        x = np.broadcast_to(x0, (hi - lo, model.n_modes)).copy()
        if slot[0] >= 0:
            out[lo:hi, slot[0]] = x
        for k in range(grid.n_steps):
            ca, cy, v = coeffs[k]
            x = ca * x + cy * y + np.sqrt(v) * z[:, k]
            if slot[k + 1] >= 0:
                out[lo:hi, slot[k + 1]] = x
    return out


# ---------------------------------------------------------------------------
# noisy endpoint observation
# ---------------------------------------------------------------------------


def _obs_var_array(model: SpectralModel, obs_var) -> np.ndarray:
    v = np.asarray(obs_var, dtype=np.float64)
    if v.ndim == 0:
        v = np.full(model.n_modes, float(v))
    if v.shape != (model.n_modes,):
        raise DomainError("obs_var must be a scalar or one value per mode")
    if np.any(v <= 0.0):
        raise DomainError("observation variances must be strictly positive")
    return v


def log_h_noisy_obs(
    model: SpectralModel,
    t: float,
    x,
    horizon: float,
    v,
    obs_var,
    r_min: float | None = None,
):
    """Log of the endpoint-observation transform: the transition density
    convolved per mode with the Gaussian observation noise."""
    x = model.validate_field(x)
    v = model.validate_field(v)
    sig2 = _obs_var_array(model, obs_var)
    r = _lag(t, horizon, r_min)
    qr = covariance_qt_diag(model, r)
    qinf = model.q / (2.0 * np.abs(model.lam))
    den = qr + sig2
    mean = np.exp(model.lam * r) * x
    per_mode = (
        -0.5 * np.log(den / qinf) - (v - mean) ** 2 / (2.0 * den) + v**2 / (2.0 * qinf)
    )
    return np.sum(per_mode, axis=-1)


def grad_log_h_noisy_obs(
    model: SpectralModel,
    t: float,
    x,
    horizon: float,
    v,
    obs_var,
    r_min: float | None = None,
) -> np.ndarray:
    x = model.validate_field(x)
    v = model.validate_field(v)
    sig2 = _obs_var_array(model, obs_var)
    r = _lag(t, horizon, r_min)
    den = covariance_qt_diag(model, r) + sig2
    elr = np.exp(model.lam * r)
    return elr * (v - elr * x) / den


# ---------------------------------------------------------------------------
# Chapman-Kolmogorov check (single mode, Gauss-Hermite)
# ---------------------------------------------------------------------------


def _log_ptilde_mode(lam: float, q: float, r: float, x, y):
    qr = q * one_minus_exp(2.0 * lam * r) / (2.0 * abs(lam))
    qinf = q / (2.0 * abs(lam))
    mean = np.exp(lam * r) * x
    return (
        -0.5 * np.log(one_minus_exp(2.0 * lam * r))
        - (y - mean) ** 2 / (2.0 * qr)
        + y**2 / (2.0 * qinf)
    )


def chapman_kolmogorov_residual(
    model: SpectralModel,
    mode: int,
    s: float,
    x: float,
    r: float,
    t: float,
    y: float,
    n_quad: int = 200,
) -> float:
    """|p(s,x;t,y) - integral of p(s,x;r,z) p(r,z;t,y) d nu(z)| for one mode.

    The integral against the invariant measure is evaluated by Gauss-Hermite
    quadrature centered on the intermediate transition law (an exact change
    of quadrature measure); a rule centered on the invariant measure cannot
    resolve the near-delta density when r is close to s.
    """
    if not (s < r < t):
        raise DomainError("need s < r < t")
    lam = float(model.lam[mode])
    q = float(model.q[mode])
    qinf = q / (2.0 * abs(lam))
    q_mid = q * one_minus_exp(2.0 * lam * (r - s)) / (2.0 * abs(lam))
    m_mid = np.exp(lam * (r - s)) * x
    nodes, weights = roots_hermite(n_quad)
    z = m_mid + np.sqrt(2.0 * q_mid) * nodes

    def log_phi(v, mean, var):
        return -0.5 * (np.log(2.0 * np.pi * var) + (v - mean) ** 2 / var)

    lhs = np.exp(_log_ptilde_mode(lam, q, t - s, x, y))
    log_inner = (
        _log_ptilde_mode(lam, q, r - s, x, z)
        + _log_ptilde_mode(lam, q, t - r, z, y)
        + log_phi(z, 0.0, qinf)
        - log_phi(z, m_mid, q_mid)
    )
    rhs = float(np.sum(weights * np.exp(log_inner)) / np.sqrt(np.pi))
    return abs(lhs - rhs)
