"""Positive functions on tensor lattices and the Hilbert projective metric.

A :class:`LatticeFunction` stores strictly positive node values over a
closed box and evaluates by multilinear interpolation, so the extrema of the
interpolant are attained at nodes. Everything here that takes a sup or inf
works on node values for that reason.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .errors import DomainError

__all__ = [
    "Box",
    "LatticeFunction",
    "hilbert_distance",
    "truncate_clamp",
    "l1_normalize",
    "trapezoid_weights",
    "straddles_one",
]


@dataclass(frozen=True)
class Box:
    """Axis-aligned closed box ``[lo_1, hi_1] x ... x [lo_d, hi_d]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DomainError("box bounds must be 1-d arrays of equal length")
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)):
            raise DomainError("box bounds must be finite")
        if np.any(hi < lo):
            raise DomainError("box has hi < lo")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def cube(cls, lo, hi, dim):
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)))

    @property
    def dim(self):
        return self.lo.shape[0]

    @property
    def width(self):
        return self.hi - self.lo

    @property
    def volume(self):
        return float(np.prod(self.width))

    def contains(self, x):
        x = np.atleast_2d(x)
        return np.all((x >= self.lo) & (x <= self.hi), axis=1)

    def inflate(self, fraction):
        pad = fraction * self.width
        return Box(self.lo - pad, self.hi + pad)

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((tuple(self.lo), tuple(self.hi)))

    def __repr__(self):
        return f"Box(lo={self.lo.tolist()}, hi={self.hi.tolist()})"


def _axes(box, shape):
    return [np.linspace(box.lo[j], box.hi[j], shape[j]) for j in range(box.dim)]


def trapezoid_weights(box, shape):
    """Tensor trapezoid quadrature weights, shaped like the lattice."""
    w = np.ones(())
    for j in range(box.dim):
        n = shape[j]
        h = (box.hi[j] - box.lo[j]) / (n - 1)
        wj = np.full(n, h)
        wj[0] = wj[-1] = 0.5 * h
        w = np.multiply.outer(w, wj)
    return w


@dataclass
class LatticeFunction:
    """Strictly positive node values on a tensor lattice over ``box``."""

    box: Box
    values: np.ndarray
    interpolation: str = "multilinear"
    _axes: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != self.box.dim:
            raise DomainError(
                f"values have {values.ndim} axes but the box has dimension {self.box.dim}"
            )
        if any(n < 2 for n in values.shape):
            raise DomainError("every lattice axis needs at least two nodes")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DomainError("lattice values must be finite and strictly positive")
        if self.interpolation != "multilinear":
            raise DomainError(f"unknown interpolation rule {self.interpolation!r}")
        self.values = values
        self._axes = _axes(self.box, values.shape)

    @classmethod
    def from_function(cls, box, shape, func):
        """Sample ``func`` (vectorized over an (n, d) array) at lattice nodes."""
        if np.isscalar(shape):
            shape = (int(shape),) * box.dim
        shape = tuple(int(n) for n in shape)
        nodes = lattice_nodes(box, shape)
        return cls(box, np.asarray(func(nodes), dtype=float).reshape(shape))

    @classmethod
    def constant(cls, box, shape, value=1.0):
        if np.isscalar(shape):
            shape = (int(shape),) * box.dim
        return cls(box, np.full(tuple(shape), float(value)))

    @property
    def shape(self):
        return self.values.shape

    @property
    def dim(self):
        return self.box.dim

    @property
    def axes(self):
        return self._axes

    def nodes(self):
        return lattice_nodes(self.box, self.shape)

    def with_values(self, values):
        return LatticeFunction(self.box, np.asarray(values).reshape(self.shape), self.interpolation)

    def same_lattice(self, other):
        return self.shape == other.shape and self.box == other.box

    def weights(self):
        return trapezoid_weights(self.box, self.shape)

    def integral(self):
        return float(np.sum(self.weights() * self.values))

    def min(self):
        return float(self.values.min())

    def max(self):
        return float(self.values.max())

    def __call__(self, x):
        """Multilinear interpolant at points ``x`` (clipped into the box)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n, d = x.shape
        base = []
        frac = []
        for j in range(d):
            ax = self._axes[j]
            h = (ax[-1] - ax[0]) / (len(ax) - 1)
            t = (np.clip(x[:, j], ax[0], ax[-1]) - ax[0]) / h
            i = np.clip(np.floor(t).astype(np.int64), 0, len(ax) - 2)
            base.append(i)
            frac.append(t - i)
        out = np.zeros(n)
        for corner in product((0, 1), repeat=d):
            w = np.ones(n)
            idx = []
            for j, c in enumerate(corner):
                w = w * (frac[j] if c else 1.0 - frac[j])
                idx.append(base[j] + c)
            out += w * self.values[tuple(idx)]
        return out


def lattice_nodes(box, shape):
    """Node coordinates in row-major order, shape (prod(shape), d)."""
    grids = np.meshgrid(*_axes(box, shape), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _check_pair(f, g):
    if not f.same_lattice(g):
        raise DomainError("Hilbert distance needs functions on the same lattice")


def hilbert_distance(f, g):
    """``log(max(f/g) / min(f/g))`` over lattice nodes."""
    _check_pair(f, g)
    r = f.values / g.values
    return float(np.log(r.max() / r.min()))


def straddles_one(f, g, rtol=1e-12):
    """True when ``min(f/g) <= 1 <= max(f/g)`` over nodes, up to rounding ``rtol``."""
    _check_pair(f, g)
    r = f.values / g.values
    return bool(r.min() <= 1.0 + rtol and r.max() >= 1.0 - rtol)


def truncate_clamp(f, a, b):
    """Clamp node values into ``[a, b]``."""
    if not (0 < a < b):
        raise DomainError(f"truncation needs 0 < a < b, got a={a}, b={b}")
    return f.with_values(np.clip(f.values, a, b))


def l1_normalize(f):
    """Divide by the trapezoid L1 norm; returns ``(normalized, norm)``."""
    norm = f.integral()
    return f.with_values(f.values / norm), norm
