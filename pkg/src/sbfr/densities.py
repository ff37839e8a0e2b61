"""Box-supported densities with exact, index-addressed samplers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import DomainError, PathologicalEnvelopeError
from .lattice import Box, LatticeFunction

_MAX_ATTEMPTS = 100_000


class BoxDensity:
    """Probability density supported on a closed box, zero outside it.

    Subclasses implement ``_inside_pdf`` and ``bounds``.
    """

    box: Box

    @property
    def dim(self):
        return self.box.dim

    def pdf(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = self.box.contains(x)
        out = np.zeros(x.shape[0])
        if inside.any():
            out[inside] = self._inside_pdf(x[inside])
        return out

    __call__ = pdf

    def bounds(self):
        """(min, max) of the density over its box."""
        raise NotImplementedError

    def sample(self, stream, indices):
        """One draw per index, a deterministic function of ``(stream, index)``."""
        return rejection_sample(self.pdf, self.box, self.bounds()[1], stream, indices)


@dataclass(frozen=True)
class Atom:
    """Point mass; degenerate marginal or potential."""

    point: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, dtype=float)))

    @property
    def dim(self):
        return self.point.shape[0]

    def sample(self, stream, indices):
        return np.tile(self.point, (len(indices), 1))


class UniformDensity(BoxDensity):
    def __init__(self, box):
        self.box = box
        self._level = 1.0 / box.volume

    def _inside_pdf(self, x):
        return np.full(x.shape[0], self._level)

    def bounds(self):
        return self._level, self._level

    def sample(self, stream, indices):
        u = stream.uniforms(indices, 0, self.dim)
        return self.box.lo + u * self.box.width

    def __repr__(self):
        return f"UniformDensity({self.box!r})"


class PolynomialDensity(BoxDensity):
    """Product of per-axis polynomials (ascending coefficients), normalized."""

    def __init__(self, box, coeffs):
        self.box = box
        if len(coeffs) == 1 and box.dim > 1:
            coeffs = list(coeffs) * box.dim
        if len(coeffs) != box.dim:
            raise DomainError("need one coefficient list per axis")
        self.coeffs = [np.asarray(c, dtype=float) for c in coeffs]
        self._norms = []
        self._ranges = []
        for j, c in enumerate(self.coeffs):
            lo, hi = box.lo[j], box.hi[j]
            anti = P.polyint(c)
            z = P.polyval(hi, anti) - P.polyval(lo, anti)
            cand = [lo, hi]
            if len(c) > 2:
                for r in P.polyroots(P.polyder(c)):
                    if abs(r.imag) < 1e-12 and lo <= r.real <= hi:
                        cand.append(r.real)
            vals = P.polyval(np.array(cand), c)
            if vals.min() <= 0:
                raise DomainError(f"polynomial on axis {j} is not positive on the box")
            self._norms.append(z)
            self._ranges.append((vals.min() / z, vals.max() / z))

    def _inside_pdf(self, x):
        out = np.ones(x.shape[0])
        for j, c in enumerate(self.coeffs):
            out *= P.polyval(x[:, j], c) / self._norms[j]
        return out

    def bounds(self):
        return float(np.prod([r[0] for r in self._ranges])), float(np.prod([r[1] for r in self._ranges]))

    def __repr__(self):
        return f"PolynomialDensity({self.box!r}, {[c.tolist() for c in self.coeffs]})"


class LatticeDensity(BoxDensity):
    """Multilinear density from lattice values, renormalized to unit mass."""

    def __init__(self, func: LatticeFunction):
        self.lattice = func.with_values(func.values / func.integral())
        self.box = func.box

    def _inside_pdf(self, x):
        return self.lattice(x)

    def bounds(self):
        return self.lattice.min(), self.lattice.max()

    def __repr__(self):
        return f"LatticeDensity({self.box!r}, shape={self.lattice.shape})"


def rejection_sample(pdf, box, envelope, stream, indices, min_acceptance=1e-4):
    """Uniform-proposal rejection sampling, exact in distribution.

    Attempt ``k`` for index ``i`` uses slot ``k`` of the stream, so each
    index's draw is independent of which other indices are requested.
    """
    indices = np.asarray(indices, dtype=np.int64)
    d = box.dim
    acceptance = 1.0 / (envelope * box.volume)
    if acceptance < min_acceptance:
        raise PathologicalEnvelopeError(
            f"acceptance probability {acceptance:.3g} below {min_acceptance:g}"
        )
    out = np.empty((indices.shape[0], d))
    pending = np.arange(indices.shape[0])
    attempt = 0
    while pending.size:
        if attempt >= _MAX_ATTEMPTS:
            raise PathologicalEnvelopeError("rejection sampler exceeded its attempt budget")
        u = stream.uniforms(indices[pending], attempt, d + 1)
        x = box.lo + u[:, :d] * box.width
        ok = u[:, d] * envelope <= pdf(x)
        out[pending[ok]] = x[ok]
        pending = pending[~ok]
        attempt += 1
    return out
