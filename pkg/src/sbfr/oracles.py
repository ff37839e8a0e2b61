"""Ground truth: exact grid fixed point, Gaussian reference models, atom cases."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .errors import ConvergenceError, DomainError
from .lattice import Box, lattice_nodes, trapezoid_weights
from .sde import DiffusionModel

__all__ = [
    "GridProblem",
    "GridSolution",
    "grid_C",
    "grid_fixed_point",
    "grid_residuals",
    "closed_form_model",
    "degenerate_potentials",
    "PointMass",
    "oracle_bounds",
    "birkhoff_ceiling",
    "kernel_matrix",
]


def birkhoff_ceiling(q_min, q_max):
    """``tanh^2(log(q_max/q_min)/2)``: contraction ceiling of the composed operator."""
    return math.tanh(0.5 * math.log(q_max / q_min)) ** 2


def _unit_mass(rho, w):
    # already-normalized input is kept as is so that file round trips are exact
    mass = float(np.dot(w, rho))
    return rho if abs(mass - 1.0) <= 1e-13 else rho / mass


@dataclass
class GridProblem:
    """Discretized Schrodinger system.

    ``q[i, j] = q(0, x_i; T, z_j)``; ``w0``/``wT`` are quadrature weights and
    the marginals are renormalized so that ``sum(w * rho) == 1``.
    """

    x: np.ndarray
    z: np.ndarray
    w0: np.ndarray
    wT: np.ndarray
    rho0: np.ndarray
    rhoT: np.ndarray
    q: np.ndarray
    box0: Optional[Box] = None
    boxT: Optional[Box] = None
    shape0: Optional[tuple] = None
    shapeT: Optional[tuple] = None

    def __post_init__(self):
        self.x = _as_points(self.x)
        self.z = _as_points(self.z)
        self.w0 = np.asarray(self.w0, dtype=float).ravel()
        self.wT = np.asarray(self.wT, dtype=float).ravel()
        self.q = np.asarray(self.q, dtype=float)
        if self.q.shape != (self.w0.size, self.wT.size):
            raise DomainError("kernel matrix shape does not match the quadrature weights")
        if not np.all(self.q > 0) or not np.all(np.isfinite(self.q)):
            raise DomainError("kernel entries must be finite and strictly positive")
        if np.any(self.w0 <= 0) or np.any(self.wT <= 0):
            raise DomainError("quadrature weights must be positive")
        rho0 = np.asarray(self.rho0, dtype=float).ravel()
        rhoT = np.asarray(self.rhoT, dtype=float).ravel()
        if np.any(rho0 <= 0) or np.any(rhoT <= 0):
            raise DomainError("marginals must be strictly positive")
        self.rho0 = _unit_mass(rho0, self.w0)
        self.rhoT = _unit_mass(rhoT, self.wT)

    @classmethod
    def from_model(cls, model, rho0, rhoT, box0, boxT, n0, nT=None):
        """Trapezoid lattices over the two boxes and the model's closed-form ``q``."""
        nT = n0 if nT is None else nT
        shape0 = (n0,) * box0.dim if np.isscalar(n0) else tuple(n0)
        shapeT = (nT,) * boxT.dim if np.isscalar(nT) else tuple(nT)
        x = lattice_nodes(box0, shape0)
        z = lattice_nodes(boxT, shapeT)
        q = kernel_matrix(model, x, z)
        return cls(x, z, trapezoid_weights(box0, shape0).ravel(),
                   trapezoid_weights(boxT, shapeT).ravel(), rho0(x), rhoT(z), q,
                   box0, boxT, shape0, shapeT)

    @property
    def q_min(self):
        return float(self.q.min())

    @property
    def q_max(self):
        return float(self.q.max())

    def forward(self, f):
        """``x_i -> sum_j q_ij rhoT_j f_j wT_j``."""
        return self.q @ (self.rhoT * f * self.wT)

    def backward(self, f):
        """``z_j -> sum_i rho0_i f_i q_ij w0_i``."""
        return (self.rho0 * f * self.w0) @ self.q


def _as_points(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def kernel_matrix(model, x, z):
    n, m = x.shape[0], z.shape[0]
    xi = np.repeat(x, m, axis=0)
    zj = np.tile(z, (n, 1))
    return model.transition_density(0.0, xi, model.T, zj).reshape(n, m)


def grid_C(p, g):
    """Exact discrete fixed-point map ``g -> E0[1 / ET[1 / g]]``."""
    return p.backward(1.0 / p.forward(1.0 / np.asarray(g, dtype=float)))


def _dH(f, g):
    r = f / g
    return float(np.log(r.max() / r.min()))


@dataclass
class GridSolution:
    g: np.ndarray
    nu0: np.ndarray
    nuT: np.ndarray
    iterations: int
    increments: list = field(default_factory=list)
    problem: Optional[GridProblem] = field(default=None, repr=False)

    def g_at(self, model, z):
        """Nystrom extension ``z -> sum_i w0_i nu0_i q(0, x_i; T, z)`` off the grid."""
        p = self.problem
        z = np.atleast_2d(z)
        return kernel_matrix(model, p.x, z).T @ (p.w0 * self.nu0)


def grid_fixed_point(p, tol=1e-13, max_iter=10_000, g0=None):
    """Iterate the normalized discrete map until successive ``d_H < tol``.

    Returns ``g`` with ``sum(wT * g) == 1``, ``nuT = rhoT / g`` and
    ``nu0 = rho0 / (q @ (wT * nuT))``.
    """
    if not tol > 0:
        raise DomainError("tol must be positive")
    g = np.full(p.wT.size, 1.0 / p.wT.sum()) if g0 is None else np.asarray(g0, dtype=float)
    g = g / np.dot(p.wT, g)
    increments = []
    for it in range(1, max_iter + 1):
        new = grid_C(p, g)
        new = new / np.dot(p.wT, new)
        inc = _dH(new, g)
        increments.append(inc)
        g = new
        if inc < tol:
            return _finish(p, g, it, increments)
    partial = _finish(p, g, max_iter, increments)
    raise ConvergenceError(
        f"grid iteration did not reach tol={tol:g} in {max_iter} steps", partial, increments[-1]
    )


def _finish(p, g, iterations, increments):
    nuT = p.rhoT / g
    nu0 = p.rho0 / p.forward(1.0 / g)
    return GridSolution(g, nu0, nuT, iterations, increments, p)


def grid_residuals(p, nu0, nuT):
    """Relative residuals of both discrete Schrodinger equations (sup norm)."""
    r0 = nu0 * (p.q @ (p.wT * nuT)) / p.rho0 - 1.0
    rT = nuT * ((p.w0 * nu0) @ p.q) / p.rhoT - 1.0
    return float(np.max(np.abs(r0))), float(np.max(np.abs(rT)))


def closed_form_model(kind="brownian", d=1, sigma=1.0, theta=0.0, T=1.0):
    """Brownian motion or Ornstein-Uhlenbeck with exact Gaussian transitions.

    ``dX = -theta X dt + sigma dW``; ``theta = 0`` is Brownian motion.
    """
    if kind not in ("brownian", "ou"):
        raise DomainError(f"unknown model kind {kind!r}")
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if kind == "brownian":
        theta = 0.0
    theta = float(theta)
    sigma = float(sigma)

    def moments(dt):
        dt = np.asarray(dt, dtype=float)
        if theta == 0.0:
            return np.ones_like(dt), sigma**2 * dt
        k = np.exp(-theta * dt)
        return k, -sigma**2 * np.expm1(-2.0 * theta * dt) / (2.0 * theta)

    def drift(t, x):
        return -theta * x

    def diffusion(t, x):
        n = x.shape[0]
        out = np.zeros((n, d, d))
        idx = np.arange(d)
        out[:, idx, idx] = sigma
        return out

    def log_q(s, x, t, y):
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        k, v = moments(np.asarray(t) - np.asarray(s))
        k = np.reshape(k, (-1, 1)) if np.ndim(k) else k
        v = np.reshape(v, (-1,)) if np.ndim(v) else v
        r2 = np.sum((y - k * x) ** 2, axis=1)
        return -0.5 * r2 / v - 0.5 * d * np.log(2.0 * np.pi * v)

    def grad_log_q(s, x, t, y):
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        k, v = moments(np.asarray(t) - np.asarray(s))
        k = np.reshape(k, (-1, 1)) if np.ndim(k) else k
        v = np.reshape(v, (-1, 1)) if np.ndim(v) else v
        return k * (y - k * x) / v

    def forward_mass(x, box):
        x = np.atleast_2d(x)
        k, v = moments(T)
        sd = math.sqrt(v)
        m = k * x
        return np.prod(ndtr((box.hi - m) / sd) - ndtr((box.lo - m) / sd), axis=1)

    def backward_mass(z, box):
        z = np.atleast_2d(z)
        k, v = moments(T)
        sd = math.sqrt(v)
        per = (ndtr((z - k * box.lo) / sd) - ndtr((z - k * box.hi) / sd)) / k
        return np.prod(per, axis=1)

    zeros_n = lambda t, x: np.zeros(x.shape[0])  # noqa: E731
    return DiffusionModel(
        dim=d,
        noise_dim=d,
        drift=drift,
        diffusion=diffusion,
        T=float(T),
        drift_divergence=lambda t, x: np.full(x.shape[0], -theta * d),
        diffusivity_divergence=lambda t, x: np.zeros_like(x),
        diffusivity_hessian_trace=zeros_n,
        log_transition_density=log_q,
        transition_grad_log=grad_log_q,
        forward_box_mass=forward_mass,
        backward_box_mass=backward_mass,
        name=kind if theta else "brownian",
    )


@dataclass(frozen=True)
class PointMass:
    """Weighted atom ``mass * delta_point``."""

    point: np.ndarray
    mass: float = 1.0


def degenerate_potentials(case, q, x0=None, z0=None, rho_other=None):
    """Closed-form potentials when one or both marginals are atoms.

    ``q(x, z)`` is vectorized over (n, d) arrays. For ``start_atom`` and
    ``end_atom`` the density side is returned as a callable; the scale
    constant is fixed to 1.
    """
    if case == "start_atom":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))

        def nuT(z):
            z = np.atleast_2d(z)
            return rho_other(z) / q(np.tile(x0, (z.shape[0], 1)), z)

        return PointMass(x0, 1.0), nuT
    if case == "end_atom":
        z0 = np.atleast_1d(np.asarray(z0, dtype=float))

        def nu0(x):
            x = np.atleast_2d(x)
            return rho_other(x) / q(x, np.tile(z0, (x.shape[0], 1)))

        return nu0, PointMass(z0, 1.0)
    if case == "both":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        z0 = np.atleast_1d(np.asarray(z0, dtype=float))
        c = float(q(x0[None, :], z0[None, :])[0])
        return PointMass(x0, 1.0), PointMass(z0, 1.0 / c)
    raise DomainError(f"unknown degenerate case {case!r}")


def oracle_bounds(model, rho0, rhoT, box0, boxT, nodes=17):
    """Bounds for the clamp and fallbacks by lattice optimization of ``q``.

    Exact for Brownian models (extrema sit on the diagonal and at corners);
    a close lattice estimate otherwise.
    """
    from .kernels import BoundsConfig

    if not model.has_density or model.forward_box_mass is None:
        raise DomainError("oracle bounds need a closed-form transition density")
    x = lattice_nodes(box0, (nodes,) * box0.dim)
    z = lattice_nodes(boxT, (nodes,) * boxT.dim)
    q = kernel_matrix(model, x, z)
    QT = model.forward_box_mass(x, boxT)
    Q0 = model.backward_box_mass(z, box0)
    r0 = rho0.bounds()
    rT = rhoT.bounds()
    return BoundsConfig(
        q_min=float(q.min()),
        q_max=float(q.max()),
        Q_min=float(min(QT.min(), Q0.min())),
        Q_max=float(max(QT.max(), Q0.max())),
        rho_min=float(min(r0[0], rT[0])),
        rho_max=float(max(r0[1], rT[1])),
    )

