"""Truncated, normalized Picard iteration for the bridge potentials."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import rng
from .errors import DomainError
from .kernels import (
    BoundsConfig,
    SampleClouds,
    _estimate,
    build_clouds,
    default_bandwidth,
)
from .lattice import (
    LatticeFunction,
    hilbert_distance,
    l1_normalize,
    straddles_one,
    truncate_clamp,
)
from .sde import derive_reverse_model, simulate_batch, uniform_grid

__all__ = [
    "SolverConfig",
    "IterationTrace",
    "SchrodingerSolution",
    "apply_C_hat",
    "picard_solve",
    "estimate_contraction",
    "potentials_from_g",
    "marginal_residuals",
    "ResidualReport",
]

log = logging.getLogger(__name__)

CLAMP_WARN_FRACTION = 0.10


@dataclass(frozen=True)
class SolverConfig:
    N: int = 4000
    steps: int = 64
    alpha: float = 1.0
    bandwidth: Optional[float] = None
    bounds: Optional[BoundsConfig] = None
    k_max: Optional[int] = None
    stop_tol: float = 1e-8
    master_seed: int = 0
    resample_per_iteration: bool = False
    lattice_nodes: int = 64
    mode: str = "self_normalized"
    inflate: float = 0.1
    hard_cap: int = 200

    def __post_init__(self):
        if self.N < 10:
            raise DomainError("N must be at least 10")
        if self.steps < 1:
            raise DomainError("steps must be at least 1")
        if self.k_max is not None and self.k_max < 1:
            raise DomainError("k_max must be at least 1")
        if not self.stop_tol > 0:
            raise DomainError("stop_tol must be positive")
        if not (0 < self.alpha <= 1):
            raise DomainError("alpha must lie in (0, 1]")
        if self.lattice_nodes < 2:
            raise DomainError("lattice needs at least two nodes per axis")
        if self.mode not in ("self_normalized", "direct"):
            raise DomainError(f"unknown estimator mode {self.mode!r}")

    def resolved_bandwidth(self, d):
        return self.bandwidth if self.bandwidth is not None else default_bandwidth(self.N, d, self.alpha)


@dataclass
class IterationTrace:
    increments: list = field(default_factory=list)
    l1_norms: list = field(default_factory=list)
    clamp_fractions: list = field(default_factory=list)
    straddles: list = field(default_factory=list)
    kappa_hat: Optional[float] = None
    k_max: Optional[int] = None
    converged: bool = False
    stopped_by: str = ""

    @property
    def iterations(self):
        return len(self.increments)


@dataclass
class SchrodingerSolution:
    g_hat: LatticeFunction
    nu_T: LatticeFunction
    nu_0: LatticeFunction
    trace: IterationTrace
    clouds: SampleClouds = field(repr=False)
    config: SolverConfig = field(repr=False)

    @property
    def converged(self):
        return self.trace.converged


def _endpoint_values(clouds, direction, u_at):
    """Evaluate a function at the cloud endpoints lying in the target support."""
    cloud = clouds.forward if direction == "forward" else clouds.reverse
    box = clouds.boxT if direction == "forward" else clouds.box0
    vals = np.ones(len(cloud))
    inside = box.contains(cloud.endpoints) if len(cloud) else np.zeros(0, bool)
    if inside.any():
        vals[inside] = u_at(cloud.endpoints[inside])
    return vals, inside


def apply_C_hat(clouds, f, mode="self_normalized", shape0=None):
    """One application of the estimated fixed-point map.

    The inner stage ``u = E_T[1/f]`` is evaluated at every reverse endpoint
    in ``S_0`` and at the ``S_0`` lattice nodes; the outer stage
    ``E_0[1/u]`` is returned on the lattice of ``f``.
    """
    if np.any(f.values <= 0):
        raise DomainError("C-hat input must be strictly positive")
    inv_f = f.with_values(1.0 / f.values)
    fwd_vals = inv_f(clouds.forward.endpoints) if len(clouds.forward) else np.empty(0)

    def inner(x):
        return _estimate(clouds, "forward", fwd_vals, inv_f.min(), inv_f.max(), x, mode)

    shape0 = shape0 or f.shape
    lattice0 = LatticeFunction.constant(clouds.box0, shape0)
    u_nodes = inner(lattice0.nodes())
    u_ends, inside = _endpoint_values(clouds, "reverse", inner)
    u_all = np.concatenate([u_nodes, u_ends[inside]])
    g_min = 1.0 / u_all.max()
    g_max = 1.0 / u_all.min()
    out = _estimate(clouds, "reverse", 1.0 / u_ends, g_min, g_max, f.nodes(), mode)
    return f.with_values(out)


def estimate_contraction(increments, ceiling):
    """Median ratio of successive increments, clamped to ``[0.01, ceiling]``."""
    inc = np.asarray(increments, dtype=float)
    if inc.size < 3:
        raise DomainError("contraction estimate needs at least three increments")
    prev, cur = inc[:-1], inc[1:]
    ok = prev > 1e-14
    hi = max(ceiling, 0.01)
    if not ok.any():
        return 0.01
    return float(np.clip(np.median(cur[ok] / prev[ok]), 0.01, hi))


def _rate_exponent(alpha, d):
    return (1.0 + alpha) / (2.0 * (1.0 + alpha) + d)


def _adaptive_cap(N, alpha, d, kappa):
    return max(3, math.ceil(_rate_exponent(alpha, d) * math.log(N) / math.log(1.0 / kappa)))


def picard_solve(model, rho0, rhoT, config, clouds=None):
    """Iterate ``g <- clamp(C_hat[g] / ||C_hat[g]||_1)`` from the uniform density on ``S_T``.

    Stops when the Hilbert increment drops below ``stop_tol`` or the
    iteration cap is reached. With ``k_max`` unset the cap is derived from the
    rate exponent and an estimated contraction factor once three increments
    exist. Non-convergence is reported in the trace, not raised.
    """
    from .oracles import oracle_bounds

    d = model.dim
    bounds = config.bounds
    if bounds is None:
        bounds = oracle_bounds(model, rho0, rhoT, rho0.box, rhoT.box)
        config = replace(config, bounds=bounds)
    delta = config.resolved_bandwidth(d)
    rmodel = derive_reverse_model(model)

    def make(epoch):
        return build_clouds(model, rho0, rhoT, config.N, bounds, steps=config.steps,
                            bandwidth=delta, alpha=config.alpha, master_seed=config.master_seed,
                            epoch=epoch, inflate=config.inflate, rmodel=rmodel)

    if clouds is None:
        clouds = make(0)
    shape = (config.lattice_nodes,) * d
    g = LatticeFunction.constant(rhoT.box, shape, 1.0 / rhoT.box.volume)
    lo, hi = bounds.g_star_min, bounds.g_star_max
    ceiling = bounds.contraction_ceiling
    trace = IterationTrace()
    cap = config.k_max if config.k_max is not None else config.hard_cap
    ell = 0
    while ell < cap:
        ell += 1
        if config.resample_per_iteration and ell > 1:
            clouds = make(ell - 1)
        c = apply_C_hat(clouds, g, config.mode)
        normed, norm = l1_normalize(c)
        prev_normed, _ = l1_normalize(g)
        trace.straddles.append(straddles_one(normed, prev_normed))
        frac = float(np.mean((normed.values < lo) | (normed.values > hi)))
        trace.clamp_fractions.append(frac)
        if frac > CLAMP_WARN_FRACTION:
            log.warning("clamp saturates %.0f%% of lattice nodes at iteration %d", 100 * frac, ell)
        new = truncate_clamp(normed, lo, hi)
        inc = hilbert_distance(new, g)
        trace.increments.append(inc)
        trace.l1_norms.append(norm)
        g = new
        if inc < config.stop_tol:
            trace.converged = True
            trace.stopped_by = "tolerance"
            break
        if config.k_max is None and len(trace.increments) >= 3:
            kappa = estimate_contraction(trace.increments, ceiling)
            cap = min(config.hard_cap, _adaptive_cap(config.N, config.alpha, d, kappa))
    else:
        # the rate-derived cap is a planned stop; a user or hard cap is not
        rate_stop = config.k_max is None and cap < config.hard_cap
        trace.stopped_by = "rate_cap" if rate_stop else "cap"
        trace.converged = rate_stop
    if len(trace.increments) >= 3:
        trace.kappa_hat = estimate_contraction(trace.increments, ceiling)
    trace.k_max = cap
    if not trace.converged:
        log.warning("Picard iteration stopped at cap %d with increment %.3g", cap, trace.increments[-1])
    nu0, nuT = potentials_from_g(clouds, g, rho0, rhoT, config.mode)
    return SchrodingerSolution(g, nuT, nu0, trace, clouds, config)


def potentials_from_g(clouds, g_hat, rho0, rhoT, mode="self_normalized", shape0=None):
    """``nu_T = rho_T / g`` on the ``S_T`` lattice and ``nu_0 = rho_0 / E_T[1/g]`` on ``S_0``."""
    nuT = g_hat.with_values(rhoT.pdf(g_hat.nodes()) / g_hat.values.ravel())
    inv = g_hat.with_values(1.0 / g_hat.values)
    shape0 = shape0 or g_hat.shape
    lattice0 = LatticeFunction.constant(clouds.box0, shape0)
    nodes0 = lattice0.nodes()
    fwd_vals = inv(clouds.forward.endpoints) if len(clouds.forward) else np.empty(0)
    u = _estimate(clouds, "forward", fwd_vals, inv.min(), inv.max(), nodes0, mode)
    nu0 = lattice0.with_values(rho0.pdf(nodes0) / u)
    return nu0, nuT


@dataclass
class ResidualReport:
    r0: np.ndarray
    rT: np.ndarray

    @property
    def sup0(self):
        return float(self.r0.max())

    @property
    def supT(self):
        return float(self.rT.max())

    @property
    def mean0(self):
        return float(self.r0.mean())

    @property
    def meanT(self):
        return float(self.rT.mean())

    @property
    def sup(self):
        return max(self.sup0, self.supT)


def marginal_residuals(model, solution, n_mc, master_seed=0, steps=None):
    """Relative Schrodinger-system residuals at lattice nodes from fresh paths.

    ``r0(x) = |nu0(x) E[nuT(X_T^x)] - rho0(x)| / rho0(x)`` and the mirror
    ``rT(z)`` with weighted reverse paths.
    """
    if n_mc < 1:
        raise DomainError("n_mc must be at least 1")
    steps = steps or solution.config.steps
    clouds = solution.clouds
    nu0, nuT = solution.nu_0, solution.nu_T
    grid = uniform_grid(model.T, steps)

    def ext(f, box, pts):
        out = np.zeros(pts.shape[0])
        inside = box.contains(pts)
        out[inside] = f(pts[inside])
        return out

    x = nu0.nodes()
    starts = np.repeat(x, n_mc, axis=0)
    idx = np.arange(starts.shape[0], dtype=np.int64)
    s = rng.SeedStream.from_master(master_seed, rng.RESIDUAL_FORWARD)
    states, _ = simulate_batch(model.drift, model.diffusion, model.noise_dim, starts, grid, s, idx)
    m0 = ext(nuT, clouds.boxT, states[:, -1, :]).reshape(-1, n_mc).mean(axis=1)
    rho = clouds.rho0.pdf(x)
    r0 = np.abs(nu0.values.ravel() * m0 - rho) / rho

    rmodel = derive_reverse_model(model)
    z = nuT.nodes()
    starts = np.repeat(z, n_mc, axis=0)
    idx = np.arange(starts.shape[0], dtype=np.int64)
    s = rng.SeedStream.from_master(master_seed, rng.RESIDUAL_REVERSE)
    states, logw = simulate_batch(rmodel.drift, rmodel.diffusion, rmodel.noise_dim, starts, grid,
                                  s, idx, potential=rmodel.potential)
    vals = ext(nu0, clouds.box0, states[:, -1, :]) * np.exp(logw[:, -1])
    mT = vals.reshape(-1, n_mc).mean(axis=1)
    rho = clouds.rhoT.pdf(z)
    rT = np.abs(nuT.values.ravel() * mT - rho) / rho
    return ResidualReport(r0, rT)
