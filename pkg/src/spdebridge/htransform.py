"""Exponential change of measure built from positive space-time functions.

An ``HFunction`` packages the three objects the measure change consumes:
log h, its state gradient, and the generator ratio Lh/h (or the flag
"harmonic" when it vanishes identically). The module provides the
Kolmogorov action on exponential test functions, Dynkin-martingale
residual statistics, the exponential martingale in both its defining and
stochastic-exponential forms, and the diagnostics backing the sufficient
martingale conditions (Novikov estimate, Lipschitz probe).
"""

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from . import _kernels, rng
from .errors import DomainError
from .forward import (
    Nonlinearity,
    Path,
    PathEnsemble,
    _transform_matrices,
    apply_nonlinearity,
    nearest_node,
    step_coefficients,
)
from .grids import TimeGrid
from .ou import (
    grad_log_h_noisy_obs,
    grad_log_ptilde,
    log_h_noisy_obs,
    log_ptilde,
)
from .spectral import SpectralModel, covariance_qt_diag

HARMONIC = "harmonic"
UNAVAILABLE = "unavailable"

_CHUNK = 2048


@dataclass(frozen=True)
class HFunction:
    """Positive space-time function driving a change of measure.

    ``log_h`` and ``grad_x_log_h`` accept batched states (..., J);
    ``lh_over_h`` is a callable or one of the flags "harmonic"/"unavailable".
    ``horizon`` is the time up to which the function is defined (None means
    unbounded).
    """

    log_h: Callable
    grad_x_log_h: Callable
    lh_over_h: Union[Callable, str]
    horizon: float | None = None

    @property
    def is_harmonic(self) -> bool:
        return self.lh_over_h == HARMONIC

    def lh_values(self, t: float, x) -> np.ndarray:
        if self.is_harmonic:
            x = np.asarray(x)
            return np.zeros(x.shape[:-1])
        if self.lh_over_h == UNAVAILABLE:
            raise DomainError("generator ratio Lh/h is unavailable for this h")
        return np.asarray(self.lh_over_h(t, x))


def constant_h() -> HFunction:
    """h == 1: the identity change of measure."""
    return HFunction(
        log_h=lambda t, x: np.zeros(np.asarray(x).shape[:-1]),
        grad_x_log_h=lambda t, x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        lh_over_h=HARMONIC,
        horizon=None,
    )


def bridge_h(
    model: SpectralModel,
    nonlin: Nonlinearity,
    horizon: float,
    y,
    r_min: float | None = None,
) -> HFunction:
    """Transform built from the linear-process transition density to (horizon, y).

    Harmonic when the nonlinearity vanishes; otherwise Lh/h is the inner
    product of the nonlinearity with grad log h.
    """
    y = model.validate_field(np.asarray(y, dtype=np.float64))

    def _log_h(t, x):
        return log_ptilde(model, t, x, horizon, y, r_min=r_min)

    def _grad(t, x):
        return grad_log_ptilde(model, t, x, horizon, y, r_min=r_min)

    if nonlin.kind == "zero":
        lh = HARMONIC
    else:

        def lh(t, x):
            f = apply_nonlinearity(model, nonlin, t, x)
            return np.sum(f * _grad(t, x), axis=-1)

    return HFunction(_log_h, _grad, lh, horizon)


def noisy_obs_h(
    model: SpectralModel,
    nonlin: Nonlinearity,
    horizon: float,
    v,
    obs_var,
) -> HFunction:
    """Transform conditioning on a noisy endpoint observation v."""
    v = model.validate_field(np.asarray(v, dtype=np.float64))

    def _log_h(t, x):
        return log_h_noisy_obs(model, t, x, horizon, v, obs_var, r_min=0.0)

    def _grad(t, x):
        return grad_log_h_noisy_obs(model, t, x, horizon, v, obs_var, r_min=0.0)

    if nonlin.kind == "zero":
        lh = HARMONIC
    else:

        def lh(t, x):
            f = apply_nonlinearity(model, nonlin, t, x)
            return np.sum(f * _grad(t, x), axis=-1)

    return HFunction(_log_h, _grad, lh, horizon)


def check_gradient(
    h: HFunction,
    model: SpectralModel,
    t: float,
    x,
    step: float = 1e-5,
    rel_floor: float = 1e-5,
) -> float:
    """Max relative error of grad_x_log_h against central finite differences.

    Modes whose gradient sits below the finite-difference roundoff floor
    (eps * |log h| / step) cannot be certified at rel_floor and are
    discounted through the denominator.
    """
    x = model.validate_field(x)
    grad = np.asarray(h.grad_x_log_h(t, x), dtype=np.float64)
    log_h0 = float(h.log_h(t, x))
    fd = np.empty_like(grad)
    noise = np.empty_like(grad)
    for j in range(model.n_modes):
        dx = np.zeros_like(x)
        dx[j] = step * max(1.0, abs(x[j]))
        fd[j] = (h.log_h(t, x + dx) - h.log_h(t, x - dx)) / (2.0 * dx[j])
        noise[j] = np.finfo(float).eps * (1.0 + abs(log_h0)) / dx[j]
    denom = np.abs(grad) + noise / rel_floor
    return float(np.max(np.abs(fd - grad) / denom))


# ---------------------------------------------------------------------------
# Kolmogorov action on exponential test functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpTestFunction:
    """sin or cos of <x, a> + c t; the class on which the generator is explicit."""

    a: np.ndarray
    c: float
    phase: str = "sin"

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        object.__setattr__(self, "a", a)
        if not np.all(np.isfinite(a)):
            raise DomainError("test function coefficients must be finite")
        if self.phase not in ("sin", "cos"):
            raise DomainError("phase must be 'sin' or 'cos'")

    def value(self, t, x):
        u = np.asarray(x) @ self.a + self.c * t
        return np.sin(u) if self.phase == "sin" else np.cos(u)


def l0_exp_test(
    model: SpectralModel, nonlin: Nonlinearity, phi: ExpTestFunction, t: float, x
):
    """Kolmogorov operator applied to an exponential test function.

    For the sin phase: cos(u) (c + <x, lam a> + <F(t,x), a>) - sin(u) <Q a, a>/2,
    with u = <x, a> + c t; the cos phase is analogous.
    """
    x = model.validate_field(x)
    a = phi.a
    if a.shape != (model.n_modes,):
        raise DomainError("test function dimension mismatch")
    u = x @ a + phi.c * t
    drift = x @ (model.lam * a) + apply_nonlinearity(model, nonlin, t, x) @ a
    qaa = float(np.sum(model.q * a * a))
    if phi.phase == "sin":
        return np.cos(u) * (phi.c + drift) - 0.5 * np.sin(u) * qaa
    return -np.sin(u) * (phi.c + drift) - 0.5 * np.cos(u) * qaa


# ---------------------------------------------------------------------------
# Dynkin martingale residuals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DynkinStats:
    """Mean residuals of the Dynkin functional at selected times."""

    times: np.ndarray
    estimates: np.ndarray
    stderrs: np.ndarray

    @property
    def max_stat(self) -> float:
        est = np.abs(self.estimates)
        se = self.stderrs
        stats = np.where(se > 0.0, est / np.where(se > 0.0, se, 1.0), np.where(est > 0.0, np.inf, 0.0))
        return float(np.max(stats))


def _dynkin_values_stored(
    ensemble: PathEnsemble,
    phi: ExpTestFunction,
    model: SpectralModel,
    nonlin: Nonlinearity,
    node_idx: np.ndarray,
) -> np.ndarray:
    nodes = ensemble.grid.nodes
    states = ensemble.states
    gen_vals = np.empty((ensemble.n_paths, nodes.size))
    for k in range(nodes.size):
        gen_vals[:, k] = l0_exp_test(model, nonlin, phi, nodes[k], states[:, k])
    dt = ensemble.grid.steps
    cum = np.zeros((ensemble.n_paths, nodes.size))
    cum[:, 1:] = np.cumsum(0.5 * dt * (gen_vals[:, :-1] + gen_vals[:, 1:]), axis=1)
    out = np.empty((ensemble.n_paths, node_idx.size))
    for col, k in enumerate(node_idx):
        out[:, col] = phi.value(nodes[k], states[:, k]) - cum[:, k]
    return out


def _stats_from_values(values: np.ndarray, times: np.ndarray, center: np.ndarray):
    n = values.shape[0]
    est = values.mean(axis=0) - center
    sd = values.std(axis=0, ddof=1)
    return DynkinStats(times, est, sd / np.sqrt(n))


def dynkin_residual(
    paths,
    phi: ExpTestFunction,
    model: SpectralModel,
    nonlin: Nonlinearity,
    out_times,
) -> DynkinStats:
    """Residual mean[phi(t, X(t)) - trapz(L0 phi)] - phi(0, x0) at the given times.

    ``paths`` is a PathEnsemble or a nonempty sequence of Path objects on a
    common grid; out_times are mapped to the nearest grid nodes.
    """
    if isinstance(paths, PathEnsemble):
        ensemble = paths
    else:
        paths = list(paths)
        if not paths:
            raise DomainError("need at least one path")
        grid = paths[0].grid
        ensemble = PathEnsemble(
            grid,
            np.stack([p.states for p in paths]),
            np.stack([p.increments for p in paths]),
            paths[0].model_ref,
        )
    grid = ensemble.grid
    node_idx = np.array([nearest_node(grid, t) for t in out_times], dtype=np.int64)
    values = _dynkin_values_stored(ensemble, phi, model, nonlin, node_idx)
    phi0 = phi.value(0.0, ensemble.states[0, 0])
    return _stats_from_values(values, grid.nodes[node_idx], phi0)


def dynkin_residual_mc(
    model: SpectralModel,
    nonlin: Nonlinearity,
    phi: ExpTestFunction,
    x0,
    grid: TimeGrid,
    rng_seed,
    n_paths: int,
    out_times,
    *,
    oversample: int = 4,
    chunk: int = _CHUNK,
) -> DynkinStats:
    """Streaming large-ensemble version of dynkin_residual (no path storage)."""
    x0 = model.validate_field(x0)
    node_idx = np.array([nearest_node(grid, t) for t in out_times], dtype=np.int64)
    order = np.argsort(node_idx)
    sorted_idx = node_idx[order]
    if np.any(np.diff(sorted_idx) == 0):
        raise DomainError("output times map to duplicate grid nodes")
    slots = np.full(grid.n_steps + 1, -1, dtype=np.int64)
    slots[sorted_idx] = np.arange(sorted_idx.size, dtype=np.int64)
    exp_ldt, phi_dt, sqrt_qdt = step_coefficients(model, grid.steps)
    B, C = _transform_matrices(model, nonlin, oversample)
    lam_a = model.lam * phi.a
    qaa = float(np.sum(model.q * phi.a * phi.a))
    phase_sin = phi.phase == "sin"
    total = np.zeros(sorted_idx.size)
    total_sq = np.zeros(sorted_idx.size)
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        z = rng.path_increments(rng_seed, range(lo, hi), grid.n_steps, model.n_modes)
        x0b = np.broadcast_to(x0, (hi - lo, model.n_modes)).copy()
        vals = _kernels.dynkin_snap(
            x0b, z, exp_ldt, phi_dt, sqrt_qdt, B, C, nonlin.code, nonlin.alpha,
            grid.nodes, grid.steps, phi.a, phi.c, phase_sin, lam_a, qaa,
            slots, sorted_idx.size,
        )
        total += vals.sum(axis=0)
        total_sq += (vals * vals).sum(axis=0)
    mean = total / n_paths
    var = (total_sq - n_paths * mean**2) / (n_paths - 1)
    est = mean - phi.value(0.0, x0)
    stderr = np.sqrt(var / n_paths)
    inv = np.argsort(order)
    return DynkinStats(grid.nodes[sorted_idx][inv], est[inv], stderr[inv])


# ---------------------------------------------------------------------------
# exponential martingale, two constructions
# ---------------------------------------------------------------------------


def _as_ensemble(path_or_ensemble) -> PathEnsemble:
    if isinstance(path_or_ensemble, PathEnsemble):
        return path_or_ensemble
    p = path_or_ensemble
    return PathEnsemble(p.grid, p.states[None], p.increments[None], p.model_ref)


def exp_martingale_from_definition(path_or_ensemble, h: HFunction) -> np.ndarray:
    """E(t_k) = exp(log h(t_k, X_k) - log h(0, X_0) - trapz(Lh/h)); E(0) = 1.

    Returns the series over all grid nodes, shape (n_nodes,) for a Path and
    (n_paths, n_nodes) for an ensemble. Every node must lie where h is
    defined (strictly before h.horizon for density-based transforms).
    """
    ens = _as_ensemble(path_or_ensemble)
    nodes = ens.grid.nodes
    n = ens.n_paths
    log_h = np.empty((n, nodes.size))
    lh = np.empty((n, nodes.size))
    for k in range(nodes.size):
        log_h[:, k] = h.log_h(nodes[k], ens.states[:, k])
        lh[:, k] = h.lh_values(nodes[k], ens.states[:, k])
    dt = ens.grid.steps
    integral = np.zeros((n, nodes.size))
    integral[:, 1:] = np.cumsum(0.5 * dt * (lh[:, :-1] + lh[:, 1:]), axis=1)
    series = np.exp(log_h - log_h[:, :1] - integral)
    series[:, 0] = 1.0
    if isinstance(path_or_ensemble, Path):
        return series[0]
    return series


def exp_martingale_from_girsanov(
    path_or_ensemble, h: HFunction, model: SpectralModel
) -> np.ndarray:
    """Stochastic-exponential form exp(M - [M]/2) accumulated from increments.

    M is the Ito sum of <sqrt(Q) grad log h(t_k, X_k), dW_k> with
    dW = sqrt(dt) z reconstructed from the stored per-mode normals.
    """
    ens = _as_ensemble(path_or_ensemble)
    if ens.increments.size == 0:
        raise DomainError("paths carry no stored increments")
    nodes = ens.grid.nodes
    dt = ens.grid.steps
    sqrt_q = np.sqrt(model.q)
    n = ens.n_paths
    mart = np.zeros((n, nodes.size))
    qvar = np.zeros((n, nodes.size))
    for k in range(nodes.size - 1):
        g = sqrt_q * h.grad_x_log_h(nodes[k], ens.states[:, k])
        mart[:, k + 1] = mart[:, k] + np.sqrt(dt[k]) * np.sum(
            g * ens.increments[:, k], axis=-1
        )
        qvar[:, k + 1] = qvar[:, k] + dt[k] * np.sum(g * g, axis=-1)
    series = np.exp(mart - 0.5 * qvar)
    if isinstance(path_or_ensemble, Path):
        return series[0]
    return series


def novikov_estimate(
    path_or_ensemble, h: HFunction, model: SpectralModel, upto: float
):
    """Monte Carlo estimate of E[exp(0.5 int_0^S |sqrt(Q) grad log h|^2 dt)].

    Diagnostic evidence (not proof) for the Novikov sufficient condition.
    Returns (estimate, stderr).
    """
    ens = _as_ensemble(path_or_ensemble)
    if h.horizon is not None and upto >= h.horizon:
        raise DomainError("Novikov time must lie strictly before the h horizon")
    nodes = ens.grid.nodes
    k_max = int(np.searchsorted(nodes, upto + 1e-12 * max(1.0, abs(upto)), side="right")) - 1
    if k_max < 1:
        raise DomainError("Novikov time precedes the first grid step")
    norms = np.empty((ens.n_paths, k_max + 1))
    for k in range(k_max + 1):
        g = np.sqrt(model.q) * h.grad_x_log_h(nodes[k], ens.states[:, k])
        norms[:, k] = np.sum(g * g, axis=-1)
    dt = np.diff(nodes[: k_max + 1])
    integral = np.sum(0.5 * dt * (norms[:, :-1] + norms[:, 1:]), axis=1)
    vals = np.exp(0.5 * integral)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(ens.n_paths))


def lipschitz_probe(
    h: HFunction,
    model: SpectralModel,
    t_grid,
    n_pairs: int,
    radius: float,
    rng_seed: int = 0,
) -> float:
    """Empirical sup of |sqrt(Q)(grad log h(t,x) - grad log h(t,x'))| / |x - x'|.

    Random pairs are augmented with per-axis displacements so that diagonal
    (per-mode linear) gradients are sampled at their extremal directions.
    """
    gen = rng.stream(rng_seed, rng.PROBES)
    sqrt_q = np.sqrt(model.q)
    sup = 0.0
    eye = np.eye(model.n_modes)
    for t in np.asarray(t_grid, dtype=np.float64):
        xs = radius * gen.standard_normal((n_pairs, model.n_modes))
        ys = radius * gen.standard_normal((n_pairs, model.n_modes))
        base = radius * gen.standard_normal(model.n_modes)
        xs = np.vstack([xs, np.tile(base, (model.n_modes, 1))])
        ys = np.vstack([ys, base + radius * eye])
        diff = xs - ys
        norms = np.linalg.norm(diff, axis=-1)
        keep = norms > 1e-12
        gx = h.grad_x_log_h(t, xs[keep])
        gy = h.grad_x_log_h(t, ys[keep])
        num = np.linalg.norm(sqrt_q * (gx - gy), axis=-1)
        sup = max(sup, float(np.max(num / norms[keep])))
    return sup


def lipschitz_constant_bridge(model: SpectralModel, horizon: float, t_grid) -> float:
    """Closed-form Lipschitz constant of sqrt(Q) grad log h for the bridge h.

    The map is linear per mode with coefficient -exp(2 lam r)/q_r, so the
    constant at lag r is max_j sqrt(q_j) exp(2 lam_j r) / q_{j,r}.
    """
    best = 0.0
    for t in np.asarray(t_grid, dtype=np.float64):
        r = horizon - t
        if r <= 0.0:
            raise DomainError("t_grid must lie strictly before the horizon")
        coef = np.sqrt(model.q) * np.exp(2.0 * model.lam * r) / covariance_qt_diag(model, r)
        best = max(best, float(np.max(coef)))
    return best


def increment_orthogonality(series: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Normalized statistics of E[(V(t_{k+1}) - V(t_k)) * probe_p].

    ``series`` is (n_paths, K) of martingale values at increasing times;
    ``probes`` is (n_paths, P) of measurable-at-earlier-time functionals.
    Returns the (K-1, P) matrix of mean/stderr ratios; for a martingale all
    entries are O(1).
    """
    inc = np.diff(series, axis=1)
    n = series.shape[0]
    prods = inc[:, :, None] * probes[:, None, :]
    mean = prods.mean(axis=0)
    sem = prods.std(axis=0, ddof=1) / np.sqrt(n)
    return mean / np.maximum(sem, 1e-300)
