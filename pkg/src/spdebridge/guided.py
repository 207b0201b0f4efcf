"""Conditioned-process sampling: guided simulation, endpoint disintegration,
and importance weights.

A guided path follows the base dynamics plus the drift increment built from
the linear-process transition density toward the target. The accompanying
log weight is the time integral of the nonlinearity paired with the guiding
gradient, read off at a cutoff strictly before the horizon (the remaining
boundary factor involves the intractable nonlinear density and is omitted
by design; estimates stabilize as the cutoff approaches the horizon).
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _kernels, rng
from .errors import DomainError
from .forward import (
    Nonlinearity,
    Path,
    PathEnsemble,
    _transform_matrices,
    model_id,
    step_coefficients,
    _snap_slots,
)
from .grids import GEOMETRIC, TimeGrid
from .ou import _obs_var_array
from .spectral import SpectralModel, covariance_qt_diag

_CHUNK = 2048

EXACT = "exact"
NOISY_OBS = "noisy_obs"


@dataclass(frozen=True)
class GuidedSpec:
    """Target, horizon, conditioning mode, and weight-readout time."""

    y: np.ndarray
    horizon: float
    conditioning: str = EXACT
    obs_var: object = None
    weight_cutoff: float | None = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        object.__setattr__(self, "y", y)
        if self.horizon <= 0.0:
            raise DomainError("horizon must be positive")
        if self.conditioning not in (EXACT, NOISY_OBS):
            raise DomainError(f"unknown conditioning {self.conditioning!r}")
        if self.conditioning == NOISY_OBS and self.obs_var is None:
            raise DomainError("noisy_obs conditioning needs obs_var")
        cutoff = self.weight_cutoff
        if cutoff is None:
            cutoff = 0.95 * self.horizon
            object.__setattr__(self, "weight_cutoff", cutoff)
        if not (0.0 < cutoff < self.horizon):
            raise DomainError("weight cutoff must lie in (0, horizon)")


@dataclass(frozen=True)
class WeightedPath:
    """Guided path with its accumulated log importance weight."""

    path: Path
    log_weight: float
    weight_time: float

    def __post_init__(self):
        if not np.isfinite(self.log_weight):
            raise DomainError("log weight must be finite")
        if self.weight_time >= self.path.grid.horizon:
            raise DomainError("weight time must precede the horizon")


def _guide_precomps(model: SpectralModel, spec: GuidedSpec, grid: TimeGrid):
    """Per-step rows of the guiding coefficients evaluated at left nodes."""
    r = spec.horizon - grid.nodes[:-1]
    den = covariance_qt_diag(model, r)
    if spec.conditioning == NOISY_OBS:
        den = den + _obs_var_array(model, spec.obs_var)
    bg = np.exp(model.lam * r[:, None])
    wg = bg / den
    ag = model.q * wg
    return ag, bg, wg


def _check_guided_grid(spec: GuidedSpec, grid: TimeGrid):
    if abs(grid.horizon - spec.horizon) > 1e-12 * max(1.0, abs(spec.horizon)):
        raise DomainError("grid horizon does not match the conditioning horizon")
    if spec.conditioning == EXACT and grid.kind != GEOMETRIC:
        raise DomainError("exact conditioning requires a geometric grid")


def _run_guided(
    model: SpectralModel,
    nonlin: Nonlinearity,
    x0,
    spec: GuidedSpec,
    grid: TimeGrid,
    z: np.ndarray,
    y_batch: np.ndarray,
    oversample: int,
    *,
    store_full: bool,
    snap_slots=None,
    n_snap: int = 0,
    wckpt_slots=None,
    n_wckpt: int = 0,
):
    exp_ldt, phi_dt, sqrt_qdt = step_coefficients(model, grid.steps)
    B, C = _transform_matrices(model, nonlin, oversample)
    ag, bg, wg = _guide_precomps(model, spec, grid)
    n = z.shape[0]
    x0b = np.broadcast_to(x0, (n, model.n_modes)).copy()
    dummy = np.full(grid.n_steps + 1, -1, dtype=np.int64)
    return _kernels.guided(
        x0b, z, exp_ldt, phi_dt, sqrt_qdt, B, C, nonlin.code, nonlin.alpha,
        ag, bg, wg, y_batch, grid.steps, spec.conditioning == EXACT,
        dummy if snap_slots is None else snap_slots, n_snap,
        dummy if wckpt_slots is None else wckpt_slots, n_wckpt,
        store_full,
    )


def weight_node(grid: TimeGrid, cutoff: float) -> int:
    """Largest node index whose time does not exceed the cutoff."""
    k = int(np.searchsorted(grid.nodes, cutoff + 1e-12 * max(1.0, cutoff), side="right")) - 1
    if k >= grid.n_steps:
        k = grid.n_steps - 1
    if k < 1:
        raise DomainError("weight cutoff precedes the first grid step")
    return k


def cumulative_log_weight(grid: TimeGrid, integrand: np.ndarray) -> np.ndarray:
    """Trapezoid accumulation of the weight integrand along the grid.

    Valid at nodes 0 .. n_steps-1; the entry at the final node is NaN (the
    integrand is singular at the horizon and weights are never read there).
    """
    dt = grid.steps
    cum = np.empty_like(integrand)
    cum[..., 0] = 0.0
    cum[..., 1:] = np.cumsum(
        0.5 * dt * (integrand[..., :-1] + integrand[..., 1:]), axis=-1
    )
    cum[..., -1] = np.nan
    return cum


def simulate_guided(
    model: SpectralModel,
    nonlin: Nonlinearity,
    x0,
    spec: GuidedSpec,
    grid: TimeGrid,
    rng_seed=None,
    *,
    path_index: int = 0,
    oversample: int = 4,
    increments=None,
    zero_noise: bool = False,
) -> WeightedPath:
    """One guided path with its log weight read at the configured cutoff."""
    x0 = model.validate_field(x0)
    y = model.validate_field(spec.y)
    _check_guided_grid(spec, grid)
    if zero_noise:
        z = np.zeros((1, grid.n_steps, model.n_modes))
    elif increments is not None:
        z = np.asarray(increments, dtype=np.float64)[None]
    else:
        z = rng.path_increments(rng_seed, [path_index], grid.n_steps, model.n_modes)
    states, integrand, _, _ = _run_guided(
        model, nonlin, x0, spec, grid, z, y[None], oversample, store_full=True
    )
    cum = cumulative_log_weight(grid, integrand[0])
    k = weight_node(grid, spec.weight_cutoff)
    path = Path(grid, states[0], z[0], model_id(model))
    return WeightedPath(path, float(cum[k]), float(grid.nodes[k]))


def guided_ensemble_full(
    model: SpectralModel,
    nonlin: Nonlinearity,
    x0,
    spec: GuidedSpec,
    grid: TimeGrid,
    rng_seed,
    n_paths: int,
    *,
    oversample: int = 4,
    increments=None,
    endpoints=None,
) -> tuple[PathEnsemble, np.ndarray]:
    """Guided ensemble with full storage; returns (ensemble, integrand).

    ``endpoints`` optionally gives a per-path target array (n_paths, J);
    memory scales as n_paths * n_nodes * J, so this is for desk-scale runs.
    """
    x0 = model.validate_field(x0)
    _check_guided_grid(spec, grid)
    if increments is not None:
        z = np.asarray(increments, dtype=np.float64)
    else:
        z = rng.path_increments(rng_seed, range(n_paths), grid.n_steps, model.n_modes)
    if endpoints is None:
        y = model.validate_field(spec.y)
        y_batch = np.broadcast_to(y, (z.shape[0], model.n_modes)).copy()
    else:
        y_batch = model.validate_field(np.ascontiguousarray(endpoints, dtype=np.float64))
    states, integrand, _, _ = _run_guided(
        model, nonlin, x0, spec, grid, z, y_batch, oversample, store_full=True
    )
    return PathEnsemble(grid, states, z, model_id(model)), integrand


def guided_snapshots(
    model: SpectralModel,
    nonlin: Nonlinearity,
    x0,
    spec: GuidedSpec,
    grid: TimeGrid,
    rng_seed,
    n_paths: int,
    snap_nodes,
    weight_nodes,
    *,
    oversample: int = 4,
    endpoints=None,
    chunk: int = _CHUNK,
) -> tuple[np.ndarray, np.ndarray]:
    """Streaming guided ensemble: states at snap_nodes, log weights at weight_nodes.

    ``endpoints`` optionally supplies a per-path target array (n_paths, J)
    for disintegration sampling; by default every path is guided to spec.y.
    Returns (snaps (n, s, J), logw (n, w)).
    """
    x0 = model.validate_field(x0)
    _check_guided_grid(spec, grid)
    snap_slots, n_snap = _snap_slots(grid, snap_nodes)
    weight_nodes = np.asarray(weight_nodes, dtype=np.int64)
    if np.any(weight_nodes < 1) or np.any(weight_nodes >= grid.n_steps):
        raise DomainError("weight nodes must lie strictly inside the grid")
    if grid.nodes[weight_nodes].max() >= spec.horizon:
        raise DomainError("weight nodes must precede the horizon")
    wslots = np.full(grid.n_steps + 1, -1, dtype=np.int64)
    wslots[weight_nodes] = np.arange(weight_nodes.size, dtype=np.int64)
    if endpoints is None:
        y_all = np.broadcast_to(
            model.validate_field(spec.y), (n_paths, model.n_modes)
        )
    else:
        y_all = model.validate_field(np.asarray(endpoints, dtype=np.float64))
        if y_all.shape != (n_paths, model.n_modes):
            raise DomainError("endpoints must have shape (n_paths, n_modes)")
    snaps = np.empty((n_paths, n_snap, model.n_modes))
    logw = np.empty((n_paths, weight_nodes.size))
    for lo in range(0, n_paths, chunk):
        hi = min(lo + chunk, n_paths)
        z = rng.path_increments(rng_seed, range(lo, hi), grid.n_steps, model.n_modes)
        _, _, s, w = _run_guided(
            model, nonlin, x0, spec, grid, z,
            np.ascontiguousarray(y_all[lo:hi]), oversample,
            store_full=False,
            snap_slots=snap_slots, n_snap=n_snap,
            wckpt_slots=wslots, n_wckpt=weight_nodes.size,
        )
        snaps[lo:hi] = s
        logw[lo:hi] = w
    return snaps, logw


# ---------------------------------------------------------------------------
# endpoint samplers and disintegration
# ---------------------------------------------------------------------------


def endpoint_sampler_bridge(y) -> Callable:
    """Point-mass endpoint: every draw is y."""
    y = np.asarray(y, dtype=np.float64)

    def sample(gen, n: int) -> np.ndarray:
        return np.broadcast_to(y, (n, y.size)).copy()

    return sample


@dataclass(frozen=True)
class GaussianTilt:
    """Per-mode Gaussian endpoint lawN(mean_j, var_j), var_j <= stationary."""

    mean: np.ndarray
    var: np.ndarray


def endpoint_sampler_tilted(model: SpectralModel, tilt: GaussianTilt) -> Callable:
    mean = model.validate_field(np.asarray(tilt.mean, dtype=np.float64))
    var = np.asarray(tilt.var, dtype=np.float64)
    if var.shape != (model.n_modes,):
        raise DomainError("tilt variance must have one entry per mode")
    if np.any(var <= 0.0):
        raise DomainError("tilt variances must be strictly positive")
    qinf = model.q / (2.0 * np.abs(model.lam))
    if np.any(var > qinf * (1.0 + 1e-12)):
        raise DomainError("tilt variances must not exceed the stationary variances")
    scale = np.sqrt(var)

    def sample(gen, n: int) -> np.ndarray:
        return mean + scale * gen.standard_normal((n, mean.size))

    return sample


def draw_endpoints(sampler: Callable, rng_seed, n: int) -> np.ndarray:
    gen = rng.stream(rng_seed, rng.ENDPOINTS)
    return sampler(gen, n)


def sample_conditioned(
    model: SpectralModel,
    nonlin: Nonlinearity,
    x0,
    endpoint_sampler: Callable,
    horizon: float,
    grid: TimeGrid,
    rng_seed,
    n_paths: int,
    *,
    weight_cutoff: float | None = None,
    oversample: int = 4,
) -> list[WeightedPath]:
    """Two-stage conditioned sampling: endpoint draw, then a guided path to it.

    Stores full trajectories; for large ensembles where only a few
    observables are needed use conditioned_snapshots instead.
    """
    if n_paths < 1:
        raise DomainError("need at least one path")
    endpoints = draw_endpoints(endpoint_sampler, rng_seed, n_paths)
    spec = GuidedSpec(y=endpoints[0], horizon=horizon, weight_cutoff=weight_cutoff)
    ensemble, integrand = guided_ensemble_full(
        model, nonlin, x0, spec, grid, rng_seed, n_paths,
        oversample=oversample, endpoints=endpoints,
    )
    cum = cumulative_log_weight(grid, integrand)
    k_w = weight_node(grid, spec.weight_cutoff)
    t_w = float(grid.nodes[k_w])
    return [
        WeightedPath(ensemble.path(i), float(cum[i, k_w]), t_w)
        for i in range(n_paths)
    ]


def conditioned_snapshots(
    model: SpectralModel,
    nonlin: Nonlinearity,
    x0,
    endpoint_sampler: Callable,
    horizon: float,
    grid: TimeGrid,
    rng_seed,
    n_paths: int,
    *,
    weight_cutoff: float | None = None,
    snap_nodes=None,
    oversample: int = 4,
):
    """Streaming variant of sample_conditioned.

    Returns (endpoints, snaps, log_weights) with snapshot states at
    snap_nodes (default: the weight-cutoff node and the final node).
    """
    if n_paths < 1:
        raise DomainError("need at least one path")
    endpoints = draw_endpoints(endpoint_sampler, rng_seed, n_paths)
    spec = GuidedSpec(y=endpoints[0], horizon=horizon, weight_cutoff=weight_cutoff)
    k_w = weight_node(grid, spec.weight_cutoff)
    if snap_nodes is None:
        snap_nodes = [k_w, grid.n_steps]
    snaps, logw = guided_snapshots(
        model, nonlin, x0, spec, grid, rng_seed, n_paths,
        snap_nodes, [k_w], oversample=oversample, endpoints=endpoints,
    )
    return endpoints, snaps, logw[:, 0]


# ---------------------------------------------------------------------------
# self-normalized importance estimates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SelfNormalizedEstimate:
    estimate: float
    stderr: float
    ess: float


def self_normalized_from_values(
    log_weights: np.ndarray, values: np.ndarray
) -> SelfNormalizedEstimate:
    log_weights = np.asarray(log_weights, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if log_weights.size == 0:
        raise DomainError("need at least one weighted sample")
    if not np.all(np.isfinite(log_weights)):
        raise DomainError("log weights must be finite")
    w = np.exp(log_weights - np.max(log_weights))
    wsum = w.sum()
    if wsum == 0.0:
        raise DomainError("all weights vanished")
    est = float(np.sum(w * values) / wsum)
    ess = float(wsum**2 / np.sum(w * w))
    stderr = float(np.sqrt(np.sum((w * (values - est)) ** 2)) / wsum)
    return SelfNormalizedEstimate(est, stderr, ess)


def self_normalized_estimate(wpaths, functional) -> SelfNormalizedEstimate:
    """Weighted estimate of a path functional over WeightedPath samples."""
    wpaths = list(wpaths)
    if not wpaths:
        raise DomainError("need at least one weighted path")
    lw = np.array([wp.log_weight for wp in wpaths])
    vals = np.array([float(functional(wp.path)) for wp in wpaths])
    return self_normalized_from_values(lw, vals)


def effective_sample_size(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=np.float64)
    w = np.exp(lw - np.max(lw))
    return float(w.sum() ** 2 / np.sum(w * w))
