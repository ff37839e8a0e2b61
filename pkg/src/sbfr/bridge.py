"""Forward-reverse estimators for bridge functionals and Schrodinger processes.

A forward path from ``x`` up to a meeting time ``t*`` is paired with a
weighted reverse path from ``y`` of length ``T - t*``; a mollifier of width
``eps`` glues the two halves. The same pairing, run over independently drawn
start and end points, gives a non-nested estimator for finite-dimensional
laws of a Schrodinger process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng
from .densities import Atom, rejection_sample
from .errors import DomainError, InsufficientOverlapError
from .kernels import EPANECHNIKOV, CellGrid, Kernel
from .lattice import LatticeFunction, l1_normalize
from .oracles import PointMass
from .sde import derive_reverse_model, grid_through, simulate_batch

__all__ = [
    "TimePartition",
    "FddQuery",
    "PotentialSampler",
    "Estimate",
    "FddResult",
    "fr_bandwidth_rule",
    "fr_joint_estimate",
    "fr_conditional_estimate",
    "sample_from_potential",
    "fdd_schrodinger_estimate",
    "h_transform_simulate",
]

_PAIR_CHUNK = 1 << 20


@dataclass(frozen=True)
class TimePartition:
    """``0 = s_0 < ... < s_K = t* = t_0 < ... < t_L = T``."""

    forward: tuple
    reverse: tuple

    def __post_init__(self):
        fwd = tuple(float(s) for s in self.forward)
        rev = tuple(float(t) for t in self.reverse)
        if len(fwd) < 2 or len(rev) < 2:
            raise DomainError("each side of the partition needs at least two times")
        if fwd[0] != 0.0 or fwd[-1] != rev[0]:
            raise DomainError("partition must start at 0 and meet at t*")
        if np.any(np.diff(fwd) <= 0) or np.any(np.diff(rev) <= 0):
            raise DomainError("partition times must be strictly increasing")
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "reverse", rev)

    @classmethod
    def build(cls, T, t_star=None, before=(), after=()):
        t_star = 0.5 * T if t_star is None else float(t_star)
        if not (0 < t_star < T):
            raise DomainError("t* must lie strictly inside (0, T)")
        return cls((0.0, *before, t_star), (t_star, *after, float(T)))

    @property
    def T(self):
        return self.reverse[-1]

    @property
    def t_star(self):
        return self.forward[-1]

    @property
    def K(self):
        return len(self.forward) - 1

    @property
    def L(self):
        return len(self.reverse) - 1

    @property
    def reversed_clocks(self):
        """``t_hat_i = T - t_{L-i}`` for ``i = 0..L``; the last one is ``T - t*``."""
        T = self.T
        return tuple(T - self.reverse[self.L - i] for i in range(self.L + 1))

    @property
    def times(self):
        """Times at which a test functional sees the path, start and end included."""
        return np.array(self.forward + self.reverse[1:])


@dataclass
class FddQuery:
    """A functional ``g(states)`` with states of shape (P, K + L + 1, d) in time order."""

    g: Optional[Callable]
    partition: TimePartition
    R: int
    epsilon: Optional[float] = None
    N: int = 20000
    kernel: Kernel = EPANECHNIKOV

    def __post_init__(self):
        if self.R < 1:
            raise DomainError("R must be at least 1")
        if self.epsilon is not None and not self.epsilon > 0:
            raise DomainError("epsilon must be positive")


class PotentialSampler:
    """Rejection sampler for a lattice potential renormalized to a probability density."""

    def __init__(self, func: LatticeFunction):
        self.lattice, _ = l1_normalize(func)
        self.box = func.box
        self.envelope = self.lattice.max()

    @property
    def dim(self):
        return self.box.dim

    @property
    def acceptance(self):
        return 1.0 / (self.envelope * self.box.volume)

    def pdf(self, x):
        x = np.atleast_2d(x)
        out = np.zeros(x.shape[0])
        inside = self.box.contains(x)
        if inside.any():
            out[inside] = self.lattice(x[inside])
        return out

    def sample(self, stream, indices):
        return rejection_sample(self.pdf, self.box, self.envelope, stream, indices)


@dataclass
class Estimate:
    value: float
    std_error: float


@dataclass
class FddResult:
    estimate: float
    std_error: float
    c0T: float
    epsilon: float
    flag: str
    pairs: int


def fr_bandwidth_rule(d, N):
    """Mollifier width: ``N^{-max(1/4, min(1/d, 1/3))}`` for ``d <= 4``, else ``N^{-2/(4+d)}``."""
    if N < 2:
        raise DomainError("bandwidth rule needs N >= 2")
    if d <= 4:
        return float(N) ** (-max(0.25, min(1.0 / d, 1.0 / 3.0)))
    return float(N) ** (-2.0 / (4.0 + d))


def _as_atom(p):
    if isinstance(p, Atom):
        return p.point
    if isinstance(p, PointMass):
        return np.atleast_1d(np.asarray(p.point, dtype=float))
    return None


def sample_from_potential(p, count, stream):
    """``count`` exact draws; atoms are returned as-is without rejection."""
    atom = _as_atom(p)
    if atom is not None:
        return np.tile(atom, (count, 1))
    if isinstance(stream, (int, np.integer)):
        stream = rng.SeedStream.from_master(int(stream), rng.POTENTIAL_SAMPLE)
    return p.sample(stream, np.arange(count, dtype=np.int64))


def _forward_half(model, starts, partition, steps, stream):
    grid, pos = grid_through(partition.forward, model.T, steps)
    states, _ = simulate_batch(model.drift, model.diffusion, model.noise_dim, starts, grid, stream,
                               np.arange(starts.shape[0], dtype=np.int64), record=pos[1:])
    return states


def _reverse_half(rmodel, starts, partition, steps, stream):
    grid, pos = grid_through(partition.reversed_clocks, rmodel.T, steps)
    states, logw = simulate_batch(rmodel.drift, rmodel.diffusion, rmodel.noise_dim, starts, grid,
                                  stream, np.arange(starts.shape[0], dtype=np.int64),
                                  record=pos[1:], potential=rmodel.potential)
    return states, np.exp(logw[:, -1])


def _match_pairs(x_meet, y_meet, eps, kernel):
    """Pairs (forward n, reverse m) with nonzero mollifier and their ``K_eps`` values."""
    grid = CellGrid(y_meet, eps)
    n_idx, m_idx = grid.pairs(x_meet, 0.5 * eps)
    d = x_meet.shape[1]
    k = kernel((y_meet[m_idx] - x_meet[n_idx]) / eps) / eps**d
    keep = k > 0
    n_idx, m_idx, k = n_idx[keep], m_idx[keep], k[keep]
    order = np.lexsort((n_idx, m_idx))
    return n_idx[order], m_idx[order], k[order]


def _pair_states(starts, fwd, rev, ends, n_idx, m_idx, L):
    """Assemble (P, K + L + 1, d) states: start, forward records, reverse records flipped, end."""
    rev_part = rev[m_idx, : L - 1][:, ::-1] if L > 1 else rev[m_idx, :0]
    return np.concatenate(
        [starts[n_idx][:, None, :], fwd[n_idx], rev_part, ends[m_idx][:, None, :]], axis=1
    )


def _pair_values(g, starts, fwd, rev, ends, n_idx, m_idx, L):
    if g is None:
        return np.ones(n_idx.shape[0])
    out = np.empty(n_idx.shape[0])
    for lo in range(0, n_idx.shape[0], _PAIR_CHUNK):
        sl = slice(lo, lo + _PAIR_CHUNK)
        states = _pair_states(starts, fwd, rev, ends, n_idx[sl], m_idx[sl], L)
        out[sl] = np.asarray(g(states), dtype=float)
    return out


def _fr_clouds(model, x, y, partition, N, M, master_seed, steps, rmodel):
    d = model.dim
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (d,) or y.shape != (d,):
        raise DomainError("endpoints must be points of the model dimension")
    if N < 1 or M < 1:
        raise DomainError("N and M must be at least 1")
    if abs(partition.T - model.T) > 1e-12:
        raise DomainError("partition horizon differs from the model horizon")
    rmodel = rmodel or derive_reverse_model(model)
    starts = np.tile(x, (N, 1))
    ends = np.tile(y, (M, 1))
    fwd = _forward_half(model, starts, partition, steps,
                        rng.SeedStream.from_master(master_seed, rng.FR_FORWARD))
    rev, w = _reverse_half(rmodel, ends, partition, steps,
                           rng.SeedStream.from_master(master_seed, rng.FR_REVERSE))
    return starts, ends, fwd, rev, w


def _double_sum_se(terms, n_idx, m_idx, N, M):
    rows = np.bincount(n_idx, weights=terms, minlength=N) / M
    cols = np.bincount(m_idx, weights=terms, minlength=M) / N
    var = 0.0
    if N > 1:
        var += rows.var(ddof=1) / N
    if M > 1:
        var += cols.var(ddof=1) / M
    return math.sqrt(var)


def fr_joint_estimate(model, g, x, y, partition, N, M, eps, master_seed=0, steps=64,
                      kernel=EPANECHNIKOV, rmodel=None):
    """Double-sum estimate of ``E[g(X | X_T = y)] q(0, x; T, y)``.

    ``g`` maps states of shape (P, K + L + 1, d) to (P,); ``None`` means 1,
    in which case the estimate targets the transition density itself.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    starts, ends, fwd, rev, w = _fr_clouds(model, x, y, partition, N, M, master_seed, steps, rmodel)
    n_idx, m_idx, k = _match_pairs(fwd[:, -1], rev[:, -1], eps, kernel)
    terms = _pair_values(g, starts, fwd, rev, ends, n_idx, m_idx, partition.L) * k * w[m_idx]
    value = float(np.sum(terms)) / (N * M)
    return Estimate(value, _double_sum_se(terms, n_idx, m_idx, N, M))


def fr_conditional_estimate(model, g, x, y, partition, N, eps, master_seed=0, steps=64,
                            kernel=EPANECHNIKOV, rmodel=None, M=None):
    """Bridge expectation ``E[g | X_0 = x, X_T = y]`` as a ratio on shared paths."""
    M = N if M is None else M
    if not eps > 0:
        raise DomainError("eps must be positive")
    starts, ends, fwd, rev, w = _fr_clouds(model, x, y, partition, N, M, master_seed, steps, rmodel)
    n_idx, m_idx, k = _match_pairs(fwd[:, -1], rev[:, -1], eps, kernel)
    base = k * w[m_idx]
    den = float(np.sum(base))
    if not den > 0:
        raise InsufficientOverlapError(
            "no forward and reverse paths met within the mollifier; increase eps or N"
        )
    vals = _pair_values(g, starts, fwd, rev, ends, n_idx, m_idx, partition.L)
    num = float(np.sum(vals * base))
    ratio = num / den
    # delta method on the linearized terms
    lin = (vals - ratio) * base / (den / (N * M))
    return Estimate(ratio, _double_sum_se(lin, n_idx, m_idx, N, M))


def _normalizer(model, nu0, nuT, aux, master_seed, steps, rmodel):
    """``c_{0,T}`` with ``1/c = int nu0(dx) q(0,x;T,z) nuT(dz)``."""
    a0, aT = _as_atom(nu0), _as_atom(nuT)
    grid = np.linspace(0.0, model.T, steps + 1)
    idx = np.arange(aux, dtype=np.int64)
    if aT is None:
        starts = sample_from_potential(
            nu0, aux, rng.SeedStream.from_master(master_seed, rng.FDD_START0, 1))
        states, _ = simulate_batch(model.drift, model.diffusion, model.noise_dim, starts, grid,
                                   rng.SeedStream.from_master(master_seed, rng.AUX_FORWARD), idx)
        return 1.0 / float(np.mean(nuT.pdf(states[:, -1])))
    if a0 is None:
        starts = np.tile(aT, (aux, 1))
        states, logw = simulate_batch(rmodel.drift, rmodel.diffusion, rmodel.noise_dim, starts,
                                      grid, rng.SeedStream.from_master(master_seed, rng.AUX_REVERSE),
                                      idx, potential=rmodel.potential)
        return 1.0 / float(np.mean(nu0.pdf(states[:, -1]) * np.exp(logw[:, -1])))
    if not model.has_density:
        raise DomainError("two atom potentials need a closed-form transition density")
    return 1.0 / float(model.transition_density(0.0, a0[None, :], model.T, aT[None, :])[0])


def fdd_schrodinger_estimate(model, nu0, nuT, query, master_seed=0, steps=64, rmodel=None):
    """Non-nested double-sum estimate of ``E[g(path)]`` under the Schrodinger process.

    Start points ``U_r ~ nu0`` and end points ``Z_r ~ nuT`` (probability
    densities or atoms) each get one path; every (forward r', reverse r) pair
    within the mollifier contributes. Standard error is a leave-one-r-out
    jackknife with ``c_{0,T}`` held fixed.
    """
    d = model.dim
    R = query.R
    part = query.partition
    if abs(part.T - model.T) > 1e-12:
        raise DomainError("partition horizon differs from the model horizon")
    eps = query.epsilon if query.epsilon is not None else fr_bandwidth_rule(d, max(R, 2))
    rmodel = rmodel or derive_reverse_model(model)
    U = sample_from_potential(nu0, R, rng.SeedStream.from_master(master_seed, rng.FDD_START0))
    Z = sample_from_potential(nuT, R, rng.SeedStream.from_master(master_seed, rng.FDD_STARTT))
    fwd = _forward_half(model, U, part, steps, rng.SeedStream.from_master(master_seed, rng.FR_FORWARD))
    rev, w = _reverse_half(rmodel, Z, part, steps,
                           rng.SeedStream.from_master(master_seed, rng.FR_REVERSE))
    n_idx, m_idx, k = _match_pairs(fwd[:, -1], rev[:, -1], eps, query.kernel)
    terms = _pair_values(query.g, U, fwd, rev, Z, n_idx, m_idx, part.L) * k * w[m_idx]
    if not np.any(terms != 0):
        raise InsufficientOverlapError(
            "every mollifier term vanished; increase epsilon or R"
        )
    c0T = _normalizer(model, nu0, nuT, query.N, master_seed, steps, rmodel)
    total = float(np.sum(terms))
    est = c0T * total / R**2
    if R == 1:
        return FddResult(est, 0.0, c0T, eps, "single_replication", int(terms.size))
    rows = np.bincount(n_idx, weights=terms, minlength=R)
    cols = np.bincount(m_idx, weights=terms, minlength=R)
    diag = np.bincount(n_idx[n_idx == m_idx], weights=terms[n_idx == m_idx], minlength=R)
    loo = c0T * (total - rows - cols + diag) / (R - 1) ** 2
    se = math.sqrt((R - 1) / R * np.sum((loo - loo.mean()) ** 2))
    return FddResult(est, se, c0T, eps, "", int(terms.size))


def h_transform_simulate(model, nuT, start, steps, count, master_seed=0, delta_cap=None,
                         horizon=None, record_times: Sequence[float] = ()):
    """Paths of ``dX = (a + b grad log h) dt + sigma dW`` up to ``T - delta_cap``.

    ``h(w, t) = int q(t, w; T, y) nuT(y) dy`` by trapezoid quadrature on the
    lattice of ``nuT``; its log-gradient is the ``q nuT``-weighted average of
    the analytic ``grad_w log q``. Returns ``(times, states)`` with states of
    shape (count, len(times), d), times being 0, ``record_times`` and the horizon.
    """
    if model.log_transition_density is None or model.transition_grad_log is None:
        raise DomainError("h-transform needs a closed-form transition density and its gradient")
    T = model.T
    delta_cap = 0.05 * T if delta_cap is None else float(delta_cap)
    if not delta_cap > 0:
        raise DomainError("delta_cap must be positive")
    horizon = T - delta_cap if horizon is None else float(horizon)
    if horizon > T - delta_cap + 1e-12 or horizon <= 0:
        raise DomainError(f"horizon must lie in (0, T - delta_cap] = (0, {T - delta_cap:g}]")
    nodes = nuT.nodes()
    logw = np.log(nuT.weights().ravel()) + np.log(nuT.values.ravel())
    J = nodes.shape[0]

    def grad_log_h(t, x):
        n = x.shape[0]
        xr = np.repeat(x, J, axis=0)
        yr = np.tile(nodes, (n, 1))
        logits = (model.log_transition_density(t, xr, T, yr).reshape(n, J) + logw[None, :])
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        grads = model.transition_grad_log(t, xr, T, yr).reshape(n, J, -1)
        return np.einsum("nj,njd->nd", p, grads)

    def drift(t, x):
        b = model.diffusivity(t, x)
        return model.drift(t, x) + np.einsum("nij,nj->ni", b, grad_log_h(t, x))

    marks = sorted({0.0, *[float(r) for r in record_times], horizon})
    if marks[0] < 0 or marks[-1] > horizon:
        raise DomainError("record times must lie within the simulation horizon")
    grid, pos = grid_through(marks, horizon, steps)
    idx = np.arange(count, dtype=np.int64)
    x0 = sample_from_potential(start, count,
                               rng.SeedStream.from_master(master_seed, rng.H_START))
    states, _ = simulate_batch(drift, model.diffusion, model.noise_dim, x0, grid,
                               rng.SeedStream.from_master(master_seed, rng.H_PATH), idx,
                               record=pos)
    return np.array(marks), states
