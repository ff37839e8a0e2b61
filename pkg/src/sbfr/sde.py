"""Forward reference diffusion and the weighted reverse process.

Coefficient callables are vectorized: ``drift(t, x)`` maps an (n, d) array
to (n, d) and ``diffusion(t, x)`` maps it to (n, d, m). Time integration is
Euler-Maruyama on an explicit grid; noise for path ``i`` at step ``k`` is
drawn from slot ``k`` of a counter-based stream at index ``i``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _backend, rng
from .errors import DomainError, SimulationExplosionError, WeightOverflowError

__all__ = [
    "DiffusionModel",
    "ReverseModel",
    "Path",
    "Cloud",
    "simulate_forward",
    "simulate_reverse",
    "derive_reverse_model",
    "simulate_batch",
    "sample_cloud",
    "uniform_grid",
    "grid_through",
]

FD_STEP = 1e-5
FD_STEP_SECOND = 1e-4
_LOG_MAX = 709.0
_CHUNK = 8192


@dataclass
class DiffusionModel:
    """Reference SDE ``dX = a(t, X) dt + sigma(t, X) dW`` on ``[0, T]``.

    The optional fields are analytic shortcuts. Missing derivatives are
    filled by central differences when the reverse model is derived; the
    transition density and box masses exist only for closed-form models.
    """

    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable
    T: float
    drift_divergence: Optional[Callable] = None
    diffusivity_divergence: Optional[Callable] = None
    diffusivity_hessian_trace: Optional[Callable] = None
    log_transition_density: Optional[Callable] = None
    transition_grad_log: Optional[Callable] = None
    forward_box_mass: Optional[Callable] = None
    backward_box_mass: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise DomainError("dimensions must be positive")
        if not self.T > 0:
            raise DomainError("terminal time must be positive")

    @property
    def has_density(self):
        return self.log_transition_density is not None

    def diffusivity(self, t, x):
        """``b = sigma sigma^T`` at (t, x), shape (n, d, d)."""
        s = self.diffusion(t, np.atleast_2d(x))
        return np.einsum("nik,njk->nij", s, s)

    def transition_density(self, s, x, t, y):
        if self.log_transition_density is None:
            raise DomainError(f"model {self.name!r} has no closed-form transition density")
        return np.exp(self.log_transition_density(s, x, t, y))


@dataclass
class ReverseModel:
    """Coefficients of the reverse pair ``(Y, weight)``.

    ``dY = alpha(s, Y) ds + sigma_rev(s, Y) dW'`` and
    ``weight_s = exp(int_0^s c(u, Y_u) du)``.
    """

    dim: int
    noise_dim: int
    drift: Callable
    diffusion: Callable
    potential: Callable
    T: float


@dataclass
class Path:
    times: np.ndarray
    states: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("path time grid must be strictly increasing")
        if self.weights is not None and (np.any(self.weights <= 0) or self.weights[0] != 1.0):
            raise DomainError("path weights must be positive and start at 1")

    @property
    def endpoint(self):
        return self.states[-1]


@dataclass
class Cloud:
    """Start points and simulated endpoints; ``weights`` only for reverse clouds."""

    starts: np.ndarray
    endpoints: np.ndarray
    weights: Optional[np.ndarray] = None

    def __len__(self):
        return self.starts.shape[0]


def uniform_grid(T, steps):
    if steps < 1:
        raise DomainError("steps must be at least 1")
    return np.linspace(0.0, T, steps + 1)


def grid_through(nodes, T, steps):
    """Grid on ``[0, T]`` containing every node with mesh at most ``T/steps``.

    Returns ``(grid, positions)`` where ``grid[positions[i]] == nodes[i]``.
    """
    nodes = np.asarray(nodes, dtype=float)
    h = T / steps
    pieces = [np.array([nodes[0]])]
    positions = [0]
    for a, b in zip(nodes[:-1], nodes[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        seg = np.linspace(a, b, n + 1)[1:]
        seg[-1] = b
        pieces.append(seg)
        positions.append(positions[-1] + n)
    return np.concatenate(pieces), np.array(positions)


def _fd_steps(x, base):
    return base * (1.0 + np.abs(x))


def _divergence_fd(field, t, x):
    """sum_i d field_i / d x_i by central differences, field: (n,d)->(n,d)."""
    n, d = x.shape
    out = np.zeros(n)
    h = _fd_steps(x, FD_STEP)
    for i in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[:, i] += h[:, i]
        xm[:, i] -= h[:, i]
        out += (field(t, xp)[:, i] - field(t, xm)[:, i]) / (xp[:, i] - xm[:, i])
    return out


def _b_divergence_fd(model, t, x):
    """Vector ``v_i = sum_j d b^{ij} / d x_j``."""
    n, d = x.shape
    out = np.zeros((n, d))
    h = _fd_steps(x, FD_STEP)
    for j in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[:, j] += h[:, j]
        xm[:, j] -= h[:, j]
        db = model.diffusivity(t, xp)[:, :, j] - model.diffusivity(t, xm)[:, :, j]
        out += db / (xp[:, j] - xm[:, j])[:, None]
    return out


def _b_hessian_trace_fd(model, t, x):
    """``sum_ij d^2 b^{ij} / dx_i dx_j``."""
    n, d = x.shape
    h = _fd_steps(x, FD_STEP_SECOND)
    b0 = model.diffusivity(t, x)
    out = np.zeros(n)
    for i in range(d):
        xp = x.copy()
        xm = x.copy()
        xp[:, i] += h[:, i]
        xm[:, i] -= h[:, i]
        hp = xp[:, i] - x[:, i]
        hm = x[:, i] - xm[:, i]
        bp = model.diffusivity(t, xp)[:, i, i]
        bm = model.diffusivity(t, xm)[:, i, i]
        out += 2.0 * (hm * bp - (hp + hm) * b0[:, i, i] + hp * bm) / (hp * hm * (hp + hm))
        for j in range(i + 1, d):
            corners = 0.0
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                xc = x.copy()
                xc[:, i] += si * h[:, i]
                xc[:, j] += sj * h[:, j]
                bc = model.diffusivity(t, xc)
                corners = corners + si * sj * (bc[:, i, j] + bc[:, j, i])
            out += corners / (4.0 * h[:, i] * h[:, j])
    return out


def derive_reverse_model(model):
    """Reverse coefficients from the forward ones.

    ``alpha^i(s,y) = sum_j d_j b^{ij}(T-s,y) - a^i(T-s,y)``,
    ``sigma_rev(s,y) = sigma(T-s,y)`` and
    ``c(s,y) = 1/2 sum_ij d_ij b^{ij}(T-s,y) - sum_i d_i a^i(T-s,y)``.
    """
    T = model.T

    def div_b(t, y):
        if model.diffusivity_divergence is not None:
            return model.diffusivity_divergence(t, y)
        return _b_divergence_fd(model, t, y)

    def hess_b(t, y):
        if model.diffusivity_hessian_trace is not None:
            return model.diffusivity_hessian_trace(t, y)
        return _b_hessian_trace_fd(model, t, y)

    def div_a(t, y):
        if model.drift_divergence is not None:
            return model.drift_divergence(t, y)
        return _divergence_fd(model.drift, t, y)

    def alpha(s, y):
        return div_b(T - s, y) - model.drift(T - s, y)

    def sigma_rev(s, y):
        return model.diffusion(T - s, y)

    def potential(s, y):
        return 0.5 * hess_b(T - s, y) - div_a(T - s, y)

    return ReverseModel(model.dim, model.noise_dim, alpha, sigma_rev, potential, T)


def _euler_chunk(drift, diffusion, m, x0, grid, stream, indices, record, potential):
    x = np.array(x0, dtype=float, copy=True)
    n, d = x.shape
    states = np.empty((n, len(record), d))
    slot_of = {k: r for r, k in enumerate(record)}
    if 0 in slot_of:
        states[:, slot_of[0]] = x
    logw = None
    logws = None
    if potential is not None:
        logw = np.zeros(n)
        logws = np.empty((n, len(record)))
        if 0 in slot_of:
            logws[:, slot_of[0]] = 0.0
        c_prev = potential(grid[0], x)
    for k in range(len(grid) - 1):
        t = grid[k]
        dt = grid[k + 1] - t
        dw = stream.normals(indices, k, m) * math.sqrt(dt)
        x = x + drift(t, x) * dt + np.einsum("ndm,nm->nd", diffusion(t, x), dw)
        bad = ~np.all(np.isfinite(x), axis=1)
        if bad.any():
            raise SimulationExplosionError(k + 1, int(indices[np.argmax(bad)]))
        if potential is not None:
            c_next = potential(grid[k + 1], x)
            logw = logw + 0.5 * dt * (c_prev + c_next)
            c_prev = c_next
            if np.any(~np.isfinite(logw)) or np.any(np.abs(logw) > _LOG_MAX):
                over = ~np.isfinite(logw) | (np.abs(logw) > _LOG_MAX)
                raise WeightOverflowError(k + 1, int(indices[np.argmax(over)]))
        if k + 1 in slot_of:
            states[:, slot_of[k + 1]] = x
            if logws is not None:
                logws[:, slot_of[k + 1]] = logw
    return states, logws


def simulate_batch(drift, diffusion, noise_dim, x0, grid, stream, indices,
                   record=None, potential=None):
    """Euler-Maruyama for many paths at once.

    Parameters
    ----------
    x0 : (n, d) array of start points, one per entry of ``indices``.
    grid : increasing time nodes; step ``k`` draws slot ``k`` of ``stream``.
    record : grid positions to keep (default: last node only).
    potential : if given, also returns log-weights ``int c`` by trapezoid.

    Returns ``states`` of shape (n, len(record), d) and log-weights of shape
    (n, len(record)) or None. Work is split into fixed index chunks that may
    run on ``SBFR_THREADS`` workers; output does not depend on the split.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    indices = np.asarray(indices, dtype=np.int64)
    grid = np.asarray(grid, dtype=float)
    if record is None:
        record = [len(grid) - 1]
    record = [int(r) for r in record]
    n = x0.shape[0]
    if n == 0:
        empty_w = np.empty((0, len(record))) if potential is not None else None
        return np.empty((0, len(record), x0.shape[1])), empty_w
    bounds = [(lo, min(n, lo + _CHUNK)) for lo in range(0, n, _CHUNK)]

    def run(b):
        lo, hi = b
        return _euler_chunk(drift, diffusion, noise_dim, x0[lo:hi], grid, stream,
                            indices[lo:hi], record, potential)

    workers = min(_backend.thread_count(), len(bounds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    states = np.concatenate([p[0] for p in parts], axis=0)
    logws = None if potential is None else np.concatenate([p[1] for p in parts], axis=0)
    return states, logws


def simulate_forward(model, x0, steps, stream, index=0):
    """Single Euler-Maruyama path of the forward model on a uniform grid."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not np.all(np.isfinite(x0)):
        raise DomainError("start point must be finite")
    grid = uniform_grid(model.T, steps)
    states, _ = simulate_batch(model.drift, model.diffusion, model.noise_dim, x0[None, :],
                               grid, stream, [index], record=range(len(grid)))
    return Path(grid, states[0])


def simulate_reverse(rmodel, y0, steps, stream, index=0):
    """Single path of ``(Y, weight)``; the weight integrates ``c`` by trapezoid."""
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    if not np.all(np.isfinite(y0)):
        raise DomainError("start point must be finite")
    grid = uniform_grid(rmodel.T, steps)
    states, logw = simulate_batch(rmodel.drift, rmodel.diffusion, rmodel.noise_dim,
                                  y0[None, :], grid, stream, [index],
                                  record=range(len(grid)), potential=rmodel.potential)
    return Path(grid, states[0], np.exp(logw[0]))


def sample_cloud(model, sampler, N, steps, direction, master_seed, epoch=0, rmodel=None):
    """Start points from ``sampler`` and their simulated endpoints.

    Index ``i`` of the cloud depends only on ``(master_seed, epoch, i)``.
    Reverse clouds carry the weights ``exp(int c)`` at the terminal time.
    """
    if direction not in ("forward", "reverse"):
        raise DomainError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    d = model.dim
    if N == 0:
        empty = np.empty((0, d))
        return Cloud(empty, empty.copy(), None if direction == "forward" else np.empty(0))
    idx = np.arange(N, dtype=np.int64)
    grid = uniform_grid(model.T, steps)
    if direction == "forward":
        starts = sampler.sample(rng.SeedStream.from_master(master_seed, rng.FORWARD_START, epoch), idx)
        stream = rng.SeedStream.from_master(master_seed, rng.FORWARD_PATH, epoch)
        states, _ = simulate_batch(model.drift, model.diffusion, model.noise_dim, starts, grid,
                                   stream, idx)
        return Cloud(starts, states[:, -1])
    rmodel = rmodel or derive_reverse_model(model)
    starts = sampler.sample(rng.SeedStream.from_master(master_seed, rng.REVERSE_START, epoch), idx)
    stream = rng.SeedStream.from_master(master_seed, rng.REVERSE_PATH, epoch)
    states, logw = simulate_batch(rmodel.drift, rmodel.diffusion, rmodel.noise_dim, starts, grid,
                                  stream, idx, potential=rmodel.potential)
    return Cloud(starts, states[:, -1], np.exp(logw[:, -1]))
