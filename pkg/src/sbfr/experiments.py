"""Canonical fixtures and the tabular experiments built on them.

Each ``*_rows`` function returns a list of dicts that :func:`write_experiment`
serializes with a fixed column order, so outputs compare bytewise across
reruns. Run one from the shell with ``python3 -m sbfr.experiments NAME OUT.csv``.
"""

from __future__ import annotations

import sys
import time

import numpy as np

from . import bridge, densities, oracles, rng, solver
from .io import FDD_COLUMNS, STUDY_COLUMNS, write_rows
from .lattice import Box, LatticeFunction, hilbert_distance, lattice_nodes, trapezoid_weights
from .sde import derive_reverse_model, simulate_batch, uniform_grid

__all__ = [
    "brownian_fixture",
    "oracle_on_lattice",
    "rate_study_rows",
    "rate_slope",
    "reverse_representation_rows",
    "fr_density_rows",
    "fdd_bridge_rows",
    "write_experiment",
    "EXPERIMENTS",
]

# smooth, strictly positive marginals on [0, 1]
RHO0_COEFFS = (1.0, 1.0, -0.5)
RHOT_COEFFS = (1.5, -1.0, 0.8)


def brownian_fixture(sigma=1.0, T=1.0):
    """Standard 1-d Brownian reference on [0, 1] with quadratic marginals."""
    model = oracles.closed_form_model("brownian", 1, sigma, T=T)
    box = Box([0.0], [1.0])
    rho0 = densities.PolynomialDensity(box, [RHO0_COEFFS])
    rhoT = densities.PolynomialDensity(box, [RHOT_COEFFS])
    return model, rho0, rhoT


def oracle_on_lattice(model, rho0, rhoT, oracle_nodes, lattice_nodes_, tol=1e-13):
    """Grid fixed point on a fine lattice, extended to the solver lattice."""
    p = oracles.GridProblem.from_model(model, rho0.pdf, rhoT.pdf, rho0.box, rhoT.box, oracle_nodes)
    sol = oracles.grid_fixed_point(p, tol=tol)
    lat = LatticeFunction.constant(rhoT.box, (lattice_nodes_,) * model.dim)
    return lat.with_values(sol.g_at(model, lat.nodes())), sol


def rate_study_rows(model, rho0, rhoT, N_values, seeds, base=None, oracle_nodes=401,
                    timings=False, bounds=None, keep=None, seed_offset=0):
    """One row per (N, seed): Hilbert and sup distance of the solver output to the oracle."""
    base = base or solver.SolverConfig()
    bounds = bounds or oracles.oracle_bounds(model, rho0, rhoT, rho0.box, rhoT.box)
    gstar, _ = oracle_on_lattice(model, rho0, rhoT, oracle_nodes, base.lattice_nodes)
    rows = []
    for N in N_values:
        for seed in range(seed_offset, seed_offset + seeds):
            cfg = solver.SolverConfig(**{**base.__dict__, "N": int(N), "master_seed": seed,
                                         "bounds": bounds})
            t0 = time.perf_counter()
            sol = solver.picard_solve(model, rho0, rhoT, cfg)
            ms = 1000.0 * (time.perf_counter() - t0)
            kappa = sol.trace.kappa_hat
            rows.append({
                "N": int(N),
                "seed": seed,
                "iterations": sol.trace.iterations,
                "dH_to_oracle": hilbert_distance(sol.g_hat, gstar),
                "sup_error": float(np.max(np.abs(sol.g_hat.values - gstar.values))),
                "kappa_hat": float("nan") if kappa is None else kappa,
                "bandwidth": sol.clouds.bandwidth,
                "runtime_ms": round(ms, 3) if timings else 0,
            })
            if keep is not None:
                keep.append((sol, gstar))
    return rows


def rate_slope(rows):
    """Least-squares slope of log mean ``dH_to_oracle`` against log ``N``."""
    Ns = sorted({r["N"] for r in rows})
    if len(Ns) < 2:
        return float("nan")
    means = [np.mean([r["dH_to_oracle"] for r in rows if r["N"] == n]) for n in Ns]
    return float(np.polyfit(np.log(Ns), np.log(means), 1)[0])


def _trapezoid_integral(model, y, g, half_width=10.0, nodes=2001):
    """``int q(0,x;T,y) g(x) dx`` by tensor trapezoid on a wide box around ``y``."""
    d = model.dim
    k = 1.0
    # box centred on the mass of x -> q(0,x;T,y)
    sd = np.sqrt(model.T) * 2.0 + 1.0
    if model.name == "ou":
        k = float(np.exp(model.drift(0.0, np.ones((1, d)))[0, 0] * model.T))
    centre = np.asarray(y) / k
    box = Box(centre - half_width * sd / k, centre + half_width * sd / k)
    n = nodes if d == 1 else 401
    shape = (n,) * d
    x = lattice_nodes(box, shape)
    w = trapezoid_weights(box, shape).ravel()
    q = model.transition_density(0.0, x, model.T, np.tile(y, (x.shape[0], 1)))
    return float(np.sum(w * q * g(x)))


TEST_FUNCTIONS = {
    "sum_x": lambda x: np.sum(x, axis=1),
    "sum_x2": lambda x: np.sum(x * x, axis=1),
    "mixed": lambda x: 1.0 + x[:, 0] - 0.5 * x[:, -1] ** 2,
}


def reverse_representation_rows(N=100_000, seed=0, theta=0.5, steps_ou=256, y_coord=0.3):
    """Monte Carlo of ``E[g(Y_T^y) weight_T^y]`` against trapezoid quadrature."""
    rows = []
    for kind in ("brownian", "ou"):
        for d in (1, 2):
            model = oracles.closed_form_model(kind, d, 1.0, theta=theta)
            rmodel = derive_reverse_model(model)
            steps = 1 if kind == "brownian" else steps_ou
            y = np.full(d, y_coord)
            stream = rng.SeedStream.from_master(seed, rng.REVERSE_PATH, d, 0 if kind == "brownian" else 1)
            states, logw = simulate_batch(rmodel.drift, rmodel.diffusion, rmodel.noise_dim,
                                          np.tile(y, (N, 1)), uniform_grid(model.T, steps), stream,
                                          np.arange(N, dtype=np.int64), potential=rmodel.potential)
            end = states[:, -1]
            w = np.exp(logw[:, -1])
            for name, g in TEST_FUNCTIONS.items():
                vals = g(end) * w
                est = float(vals.mean())
                se = float(vals.std(ddof=1) / np.sqrt(N))
                exact = _trapezoid_integral(model, y, g)
                rows.append({"model": kind, "d": d, "g": name, "N": N, "steps": steps,
                             "estimate": est, "std_error": se, "oracle": exact,
                             "z": (est - exact) / se})
    return rows


REVERSE_COLUMNS = ("model", "d", "g", "N", "steps", "estimate", "std_error", "oracle", "z")


def fr_density_rows(N=10_000, seed=0):
    """Forward-reverse estimate of ``q(0, 0; 1, 0)`` for 1-d Brownian motion."""
    model = oracles.closed_form_model("brownian", 1, 1.0)
    part = bridge.TimePartition.build(1.0)
    eps = float(N) ** (-1.0 / 3.0)
    est = bridge.fr_joint_estimate(model, None, [0.0], [0.0], part, N, N, eps, master_seed=seed)
    exact = float(model.transition_density(0.0, np.zeros((1, 1)), 1.0, np.zeros((1, 1)))[0])
    return [{"N": N, "M": N, "epsilon": eps, "estimate": est.value, "std_error": est.std_error,
             "oracle": exact, "z": (est.value - exact) / est.std_error}]


FR_COLUMNS = ("N", "M", "epsilon", "estimate", "std_error", "oracle", "z")


def second_moment_at_meeting(states):
    """``|X_{t*}|^2`` for the two-time partition ``(0, t*, T)``."""
    return np.sum(states[:, 1, :] ** 2, axis=1)


def fdd_bridge_rows(R=2000, seed=0):
    """Atom-to-atom Brownian bridge 0 -> 0 on [0, 1]: ``E[X_{1/2}^2]`` and the ``g = 1`` check."""
    model = oracles.closed_form_model("brownian", 1, 1.0)
    part = bridge.TimePartition.build(1.0)
    a = densities.Atom([0.0])
    rows = []
    for name, g in (("second_moment", second_moment_at_meeting), ("one", None)):
        res = bridge.fdd_schrodinger_estimate(model, a, a, bridge.FddQuery(g, part, R),
                                              master_seed=seed)
        rows.append({"R": R, "seed": seed, "epsilon": res.epsilon, "t_star": part.t_star,
                     "estimate": res.estimate, "std_error": res.std_error, "c0T": res.c0T,
                     "flag": res.flag or name})
    return rows


def _rate_default():
    model, rho0, rhoT = brownian_fixture()
    return rate_study_rows(model, rho0, rhoT, (500, 1000, 2000, 4000, 8000), 10)


EXPERIMENTS = {
    "reverse": (reverse_representation_rows, REVERSE_COLUMNS),
    "fr_density": (fr_density_rows, FR_COLUMNS),
    "rate": (_rate_default, STUDY_COLUMNS),
    "fdd": (fdd_bridge_rows, FDD_COLUMNS),
}


def write_experiment(name, path):
    func, columns = EXPERIMENTS[name]
    rows = func()
    write_rows(path, columns, rows)
    return rows


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 2 or argv[0] not in EXPERIMENTS:
        print(f"usage: python3 -m sbfr.experiments {{{','.join(EXPERIMENTS)}}} OUT.csv",
              file=sys.stderr)
        return 2
    write_experiment(argv[0], argv[1])
    return 0


if __name__ == "__main__":
    sys.exit(main())
