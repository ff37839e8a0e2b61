"""Kernel sums over simulated clouds and the two operator estimators.

The forward estimator approximates ``x -> int_{S_T} q(0,x;T,z) rho_T(z) f(z) dz``
from pairs ``(x^i, X_T^{x^i})``; the reverse one approximates
``z -> int_{S_0} rho_0(x) f(x) q(0,x;T,z) dx`` from weighted reverse paths.
Both are built on product-kernel sums ``(1/N) sum_i K((x - x^i)/delta) v_i``
restricted to the cells adjacent to ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _backend
from .densities import UniformDensity
from .errors import DomainError
from .lattice import Box, LatticeFunction
from .sde import Cloud, derive_reverse_model, sample_cloud

__all__ = [
    "Kernel",
    "kernel_eval",
    "CellGrid",
    "BoundsConfig",
    "SampleClouds",
    "build_clouds",
    "nw_sum",
    "apply_forward_operator",
    "apply_reverse_operator",
    "default_bandwidth",
]


class Kernel:
    """Product Epanechnikov kernel ``prod_i 1.5 (1 - 4 u_i^2)`` on ``|u_i| <= 1/2``.

    Unit mass and vanishing first moments are checked by Gauss-Legendre
    quadrature when the kernel is built.
    """

    name = "epanechnikov"
    radius = 0.5

    def __init__(self):
        nodes, weights = np.polynomial.legendre.leggauss(8)
        u = 0.5 * nodes
        w = 0.5 * weights
        k = self.factor(u)
        mass = float(np.dot(w, k))
        moment = float(np.dot(w, u * k))
        if abs(mass - 1.0) > 1e-6 or abs(moment) > 1e-6:
            raise DomainError(f"kernel fails its quadrature check: mass={mass}, moment={moment}")
        self.mass = mass
        self.second_moment = float(np.dot(w, u * u * k))

    @staticmethod
    def factor(u):
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= 0.5, 1.5 * (1.0 - 4.0 * u * u), 0.0)

    def sup_norm(self, d):
        return 1.5**d

    def __call__(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.prod(self.factor(u), axis=1)


EPANECHNIKOV = Kernel()


def kernel_eval(kernel, u, scale):
    """``scale^{-d} K(u / scale)``; scalar for a single point, array for (n, d)."""
    if not scale > 0:
        raise DomainError("kernel scale must be positive")
    arr = np.asarray(u, dtype=float)
    single = arr.ndim <= 1
    pts = np.atleast_2d(arr) if arr.ndim else arr.reshape(1, 1)
    out = kernel(pts / scale) / scale ** pts.shape[1]
    return float(out[0]) if single else out


class CellGrid:
    """Uniform hash of points into cubic cells of side ``cell`` (CSR layout).

    Points are stored sorted by linear cell id (C order); ``cell_ids`` lists
    the occupied cells and ``offsets`` delimits each cell's run.
    """

    def __init__(self, points, cell, origin=None):
        points = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        if not cell > 0:
            raise DomainError("cell size must be positive")
        self.cell = float(cell)
        n, d = points.shape
        self.dim = d
        self.n = n
        if origin is None:
            origin = points.min(axis=0) if n else np.zeros(d)
        self.origin = np.asarray(origin, dtype=float)
        if n:
            coords = np.floor((points - self.origin) / self.cell).astype(np.int64)
            if np.any(coords < 0):
                raise DomainError("grid origin must not exceed any point coordinate")
            self.dims = coords.max(axis=0) + 1
        else:
            coords = np.zeros((0, d), dtype=np.int64)
            self.dims = np.ones(d, dtype=np.int64)
        lin = np.zeros(n, dtype=np.int64)
        for j in range(d):
            lin = lin * self.dims[j] + coords[:, j]
        self.order = np.argsort(lin, kind="stable")
        self.points = points[self.order]
        sorted_lin = lin[self.order]
        self.cell_ids, starts = np.unique(sorted_lin, return_index=True)
        self.offsets = np.append(starts, n).astype(np.int64)
        self._coords = coords

    def members(self, cell_coords):
        """Original indices of the points in the cell with integer coordinates ``cell_coords``."""
        c = np.asarray(cell_coords, dtype=np.int64)
        if np.any(c < 0) or np.any(c >= self.dims):
            return np.empty(0, dtype=np.int64)
        lin = 0
        for j in range(self.dim):
            lin = lin * int(self.dims[j]) + int(c[j])
        pos = np.searchsorted(self.cell_ids, lin)
        if pos >= len(self.cell_ids) or self.cell_ids[pos] != lin:
            return np.empty(0, dtype=np.int64)
        return self.order[self.offsets[pos]:self.offsets[pos + 1]]

    def cell_of(self, i):
        return self._coords[i]

    def pairs(self, queries, radius):
        """All (query, point) index pairs at max-norm distance ``<= radius``.

        ``radius`` may not exceed the cell size. Point indices refer to the
        original (unsorted) order.
        """
        if radius > self.cell * (1 + 1e-12):
            raise DomainError("search radius exceeds the cell size")
        queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=float)
        qi, pi = _backend.kernels.grid_pairs(self.points, self.cell_ids, self.offsets, self.dims,
                                             self.origin, self.cell, queries, float(radius))
        return qi, self.order[pi]

    def kernel_sums(self, queries, values, bandwidth):
        """``sum_i K((x - x^i)/bandwidth) values[i]`` for each query row; values (n, k)."""
        if 0.5 * bandwidth > self.cell * (1 + 1e-12):
            raise DomainError("kernel support exceeds the cell size")
        queries = np.ascontiguousarray(np.atleast_2d(queries), dtype=float)
        vals = np.ascontiguousarray(np.asarray(values, dtype=float).reshape(self.n, -1)[self.order])
        return _backend.kernels.grid_kernel_sums(self.points, vals, self.cell_ids, self.offsets,
                                                 self.dims, self.origin, self.cell, queries,
                                                 float(bandwidth), _backend.thread_count())


@dataclass(frozen=True)
class BoundsConfig:
    """Two-sided bounds on the transition density, its box masses and the marginals."""

    q_min: float
    q_max: float
    Q_min: float
    Q_max: float
    rho_min: float
    rho_max: float

    def __post_init__(self):
        for lo, hi, name in ((self.q_min, self.q_max, "q"), (self.Q_min, self.Q_max, "Q"),
                             (self.rho_min, self.rho_max, "rho")):
            if not (0 < lo <= hi < math.inf):
                raise DomainError(f"{name} bounds must satisfy 0 < min <= max < inf")

    @property
    def g_star_min(self):
        return self.q_min / self.Q_max

    @property
    def g_star_max(self):
        return self.q_max / self.Q_min

    @property
    def contraction_ceiling(self):
        return math.tanh(0.5 * math.log(self.q_max / self.q_min)) ** 2


@dataclass
class SampleClouds:
    """Forward and reverse clouds plus everything the estimators need."""

    forward: Cloud
    reverse: Cloud
    bandwidth: float
    box0: Box
    boxT: Box
    phi0: object
    phiT: object
    rho0: object
    rhoT: object
    bounds: BoundsConfig
    Q_T: Optional[Callable] = None
    Q_0: Optional[Callable] = None
    kernel: Kernel = field(default=EPANECHNIKOV)

    def __post_init__(self):
        if not (0 < self.bandwidth < 1):
            raise DomainError("bandwidth must lie in (0, 1)")
        if self.reverse.weights is not None and np.any(self.reverse.weights <= 0):
            raise DomainError("reverse weights must be positive")
        self.grid0 = CellGrid(self.forward.starts, self.bandwidth)
        self.gridT = CellGrid(self.reverse.starts, self.bandwidth)

    @property
    def N(self):
        return len(self.forward)

    @property
    def dim(self):
        return self.box0.dim


def default_bandwidth(N, d, alpha=1.0):
    """``N^{-2/(2(1+alpha)+d)}``, kept strictly below 1."""
    if N < 2:
        raise DomainError("bandwidth rule needs N >= 2")
    if not (0 < alpha <= 1):
        raise DomainError("alpha must lie in (0, 1]")
    return min(float(N) ** (-2.0 / (2.0 * (1.0 + alpha) + d)), np.nextafter(1.0, 0.0))


def build_clouds(model, rho0, rhoT, N, bounds, steps=64, bandwidth=None, alpha=1.0,
                 master_seed=0, epoch=0, inflate=0.1, exact_Q=True, rmodel=None):
    """Simulate both clouds with sampling densities uniform on inflated supports."""
    box0, boxT = rho0.box, rhoT.box
    delta = default_bandwidth(N, model.dim, alpha) if bandwidth is None else float(bandwidth)
    phi0 = UniformDensity(box0.inflate(inflate))
    phiT = UniformDensity(boxT.inflate(inflate))
    fwd = sample_cloud(model, phi0, N, steps, "forward", master_seed, epoch)
    rev = sample_cloud(model, phiT, N, steps, "reverse", master_seed, epoch,
                       rmodel=rmodel or derive_reverse_model(model))
    Q_T = Q_0 = None
    if exact_Q and model.forward_box_mass is not None:
        Q_T = lambda x: model.forward_box_mass(np.atleast_2d(x), boxT)  # noqa: E731
        Q_0 = lambda z: model.backward_box_mass(np.atleast_2d(z), box0)  # noqa: E731
    return SampleClouds(fwd, rev, delta, box0, boxT, phi0, phiT, rho0, rhoT, bounds, Q_T, Q_0)


def _side(clouds, direction):
    if direction == "forward":
        return clouds.grid0, clouds.forward, clouds.phi0, clouds.Q_T, clouds.rhoT, clouds.boxT
    if direction == "reverse":
        return clouds.gridT, clouds.reverse, clouds.phiT, clouds.Q_0, clouds.rho0, clouds.box0
    raise DomainError(f"direction must be 'forward' or 'reverse', got {direction!r}")


def nw_sum(clouds, g, x, direction="forward"):
    """``(1/N) sum_i K((x - start_i)/delta) g(end_i) [weight_i]`` over neighbor cells."""
    grid, cloud, *_ = _side(clouds, direction)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    vals = np.asarray(g(cloud.endpoints), dtype=float)
    if direction == "reverse":
        vals = vals * cloud.weights
    if len(cloud) == 0:
        out = np.zeros(pts.shape[0])
    else:
        out = grid.kernel_sums(pts, vals[:, None], clouds.bandwidth)[:, 0] / len(cloud)
    return float(out[0]) if np.ndim(x) <= 1 else out


def _estimate(clouds, direction, end_values, f_min, f_max, x, mode):
    """Operator estimate from ``f`` already evaluated at the cloud endpoints.

    ``end_values`` holds ``f(end_i)``; entries for endpoints outside the
    target support are ignored because the marginal vanishes there.
    """
    if mode not in ("self_normalized", "direct"):
        raise DomainError(f"unknown estimator mode {mode!r}")
    grid, cloud, phi, Q, rho, box = _side(clouds, direction)
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    b = clouds.bounds
    lower = b.Q_min * b.rho_min * f_min
    upper = b.Q_max * b.rho_max * f_max
    if len(cloud) == 0:
        return np.full(pts.shape[0], lower)
    inside = box.contains(cloud.endpoints).astype(float)
    num = rho(cloud.endpoints) * np.where(inside > 0, end_values, 0.0)
    cols = np.stack([num, inside], axis=1)
    if direction == "reverse":
        cols = cols * cloud.weights[:, None]
    sums = grid.kernel_sums(pts, cols, clouds.bandwidth) / len(cloud)
    s_num, s_one = sums[:, 0], sums[:, 1]
    empty = s_one <= 0
    out = np.full(pts.shape[0], lower)
    ok = ~empty
    if mode == "self_normalized" and Q is not None:
        out[ok] = Q(pts[ok]) * s_num[ok] / s_one[ok]
        return out
    dens = phi.pdf(pts) * clouds.bandwidth ** clouds.dim
    ok &= dens > 0
    out[ok] = np.clip(s_num[ok] / dens[ok], lower, upper)
    return out


def _check_positive(f):
    if not isinstance(f, LatticeFunction):
        raise DomainError("operator input must be a LatticeFunction")
    if np.any(f.values <= 0):
        raise DomainError("operator input must be strictly positive")


def apply_forward_operator(clouds, f, x, mode="self_normalized"):
    """Estimate ``int_{S_T} q(0,x;T,z) rho_T(z) f(z) dz`` at ``x`` (point or (n, d))."""
    _check_positive(f)
    ends = clouds.forward.endpoints
    vals = f(ends) if len(ends) else np.empty(0)
    out = _estimate(clouds, "forward", vals, f.min(), f.max(), x, mode)
    return float(out[0]) if np.ndim(x) <= 1 else out


def apply_reverse_operator(clouds, f, z, mode="self_normalized"):
    """Estimate ``int_{S_0} rho_0(x) f(x) q(0,x;T,z) dx`` at ``z`` from weighted reverse paths."""
    _check_positive(f)
    ends = clouds.reverse.endpoints
    vals = f(ends) if len(ends) else np.empty(0)
    out = _estimate(clouds, "reverse", vals, f.min(), f.max(), z, mode)
    return float(out[0]) if np.ndim(z) <= 1 else out
