"""Acceptance criteria, one test each, with a one-line PASS/FAIL report per criterion.

Run alone with ``pytest tests/test_acceptance.py -v -s`` or as a script.
"""

import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from sbfr import bridge, densities, experiments, oracles, solver
from sbfr.io import FDD_COLUMNS, STUDY_COLUMNS, write_rows
from sbfr.lattice import Box, LatticeFunction, hilbert_distance, l1_normalize, truncate_clamp

RATE_N = (500, 1000, 2000, 4000, 8000)
RATE_SEEDS = 10


@pytest.fixture
def report(pytestconfig):
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")

    def emit(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return emit


def dH(f, g):
    r = np.asarray(f) / np.asarray(g)
    return math.log(r.max() / r.min())


# ---- 1: exact operator contracts ---------------------------------------------

def random_grid_problem(r, n=8):
    spread = math.exp(r.uniform(math.log(1.5), math.log(50.0)))
    q = np.exp(r.uniform(0.0, math.log(spread), (n, n)))
    return oracles.GridProblem(np.arange(n, dtype=float), np.arange(n, dtype=float),
                               r.uniform(0.5, 1.5, n), r.uniform(0.5, 1.5, n),
                               r.uniform(0.2, 2.0, n), r.uniform(0.2, 2.0, n), q)


def test_c01_grid_operator_contracts(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(101)
    checks = violations = 0
    worst = 0.0
    for _ in range(100):
        p = random_grid_problem(r)
        kappa = oracles.birkhoff_ceiling(p.q_min, p.q_max)
        f, g = r.uniform(0.05, 20.0, 8), r.uniform(0.05, 20.0, 8)
        for _ in range(60):
            before = dH(f, g)
            if before < 1e-12:
                break
            f, g = oracles.grid_C(p, f), oracles.grid_C(p, g)
            after = dH(f, g)
            checks += 1
            worst = max(worst, after / (kappa * before))
            # rounding allowance of a few ulps on the log ratio
            if after > kappa * before * (1 + 1e-9) + 1e-14:
                violations += 1
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 5.0
    report(1, ok, f"{checks} iterations on 100 problems, {violations} violations, "
                  f"max ratio to ceiling {worst:.3f}, {elapsed:.2f}s")
    assert violations == 0
    assert elapsed < 5.0


# ---- 2: grid fixed point ---------------------------------------------------------

def test_c02_grid_fixed_point(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(202)
    box = Box([0.0], [1.0])
    cases = [
        (oracles.closed_form_model("brownian", 1, 1.0), experiments.RHO0_COEFFS, experiments.RHOT_COEFFS),
        (oracles.closed_form_model("brownian", 1, 0.5), (1.0, 2.0), (3.0, -2.0)),
        (oracles.closed_form_model("ou", 1, 0.8, theta=1.0), (1.0, 0.0, 1.0), (1.0, 1.0)),
    ]
    worst_res = worst_gap = 0.0
    for model, c0, cT in cases:
        rho0 = densities.PolynomialDensity(box, [c0])
        rhoT = densities.PolynomialDensity(box, [cT])
        p = oracles.GridProblem.from_model(model, rho0.pdf, rhoT.pdf, box, box, 64)
        a = oracles.grid_fixed_point(p, tol=1e-13, g0=r.uniform(0.1, 10.0, 64))
        b = oracles.grid_fixed_point(p, tol=1e-13, g0=r.uniform(0.1, 10.0, 64))
        worst_res = max(worst_res, *oracles.grid_residuals(p, a.nu0, a.nuT),
                        *oracles.grid_residuals(p, b.nu0, b.nuT))
        worst_gap = max(worst_gap, dH(a.g, b.g))
    elapsed = time.perf_counter() - t0
    ok = worst_res < 1e-10 and worst_gap < 1e-8 and elapsed < 5.0
    report(2, ok, f"max residual {worst_res:.1e} (< 1e-10), start-to-start d_H {worst_gap:.1e} "
                  f"(< 1e-8), {elapsed:.2f}s")
    assert worst_res < 1e-10
    assert worst_gap < 1e-8
    assert elapsed < 5.0


# ---- 3: reverse representation ---------------------------------------------------

def test_c03_reverse_representation(report):
    t0 = time.perf_counter()
    rows = experiments.reverse_representation_rows()
    elapsed = time.perf_counter() - t0
    zmax = max(abs(r["z"]) for r in rows)
    ok = len(rows) == 12 and zmax < 3.0 and elapsed < 60.0
    report(3, ok, f"{len(rows)} cases (brownian/ou x d=1,2 x 3 functions), max |z| {zmax:.2f} (< 3), "
                  f"{elapsed:.1f}s")
    assert len(rows) == 12
    assert zmax < 3.0
    assert elapsed < 60.0


# ---- 4: forward-reverse density ------------------------------------------------

def test_c04_forward_reverse_density(report):
    t0 = time.perf_counter()
    (row,) = experiments.fr_density_rows()
    elapsed = time.perf_counter() - t0
    ok = abs(row["z"]) < 3.0 and elapsed < 60.0
    report(4, ok, f"q(0,0;1,0) estimate {row['estimate']:.5f} +- {row['std_error']:.5f} "
                  f"vs {row['oracle']:.6f}, z {row['z']:.2f}, {elapsed:.1f}s")
    assert abs(row["estimate"] - 0.398942) < 3 * row["std_error"]
    assert elapsed < 60.0


# ---- 5 and 6: solver rate and Picard monotonicity ----------------------------------

@pytest.fixture(scope="module")
def rate_runs():
    model, rho0, rhoT = experiments.brownian_fixture()
    keep = []
    t0 = time.perf_counter()
    rows = experiments.rate_study_rows(model, rho0, rhoT, RATE_N, RATE_SEEDS, keep=keep)
    elapsed = time.perf_counter() - t0
    return model, rho0, rhoT, rows, keep, elapsed


def test_c05_solver_rate_slope(report, rate_runs):
    *_, rows, _, elapsed = rate_runs
    slope = experiments.rate_slope(rows)
    ok = -0.6 <= slope <= -0.2 and elapsed < 900.0
    means = [np.mean([r["dH_to_oracle"] for r in rows if r["N"] == n]) for n in RATE_N]
    report(5, ok, f"slope {slope:.3f} in [-0.6, -0.2]; mean d_H "
                  + " ".join(f"{m:.3f}" for m in means) + f"; {elapsed:.1f}s")
    assert len(rows) == len(RATE_N) * RATE_SEEDS
    assert -0.6 <= slope <= -0.2
    assert elapsed < 900.0


def test_c06_picard_increments_contract_to_floor(report, rate_runs):
    # Per step: inc_{k+1} <= ceiling * inc_k + err_k + err_{k-1}, where
    # err_k = d_H(C_hat g_k, C g_k) is the statistical error of the estimated map
    # at the current iterate and C is the exact map on a fine quadrature grid.
    model, rho0, rhoT, rows, keep, _ = rate_runs
    p = oracles.GridProblem.from_model(model, rho0.pdf, rhoT.pdf, rho0.box, rhoT.box, 401)

    def exact_C(g):
        u = p.forward(1.0 / g(p.z))
        return g.with_values(oracles.kernel_matrix(model, p.x, g.nodes()).T @ (p.rho0 * p.w0 / u))

    steps = violations = pure = clamped = replay_bad = 0
    for sol, _ in keep:
        cfg, b = sol.config, sol.config.bounds
        kappa = b.contraction_ceiling
        g = LatticeFunction.constant(rhoT.box, (cfg.lattice_nodes,) * model.dim,
                                     1.0 / rhoT.box.volume)
        iterates, errs = [g], []
        for _ in range(sol.trace.iterations):
            c = solver.apply_C_hat(sol.clouds, g, cfg.mode)
            errs.append(hilbert_distance(c, exact_C(g)))
            g = truncate_clamp(l1_normalize(c)[0], b.g_star_min, b.g_star_max)
            iterates.append(g)
        inc = [hilbert_distance(iterates[k + 1], iterates[k]) for k in range(len(iterates) - 1)]
        if not np.allclose(inc, sol.trace.increments, rtol=1e-12, atol=0):
            replay_bad += 1
        clamped += any(f > 0 for f in sol.trace.clamp_fractions)
        for k in range(1, len(inc)):
            steps += 1
            pure += inc[k] <= kappa * inc[k - 1]
            if inc[k] > kappa * inc[k - 1] + errs[k] + errs[k - 1] + 1e-12:
                violations += 1
    ok = violations == 0 and replay_bad == 0
    report(6, ok, f"{len(keep)} runs, {steps} steps, {violations} violations of ceiling-plus-floor; "
                  f"{pure} steps contract below the ceiling outright; runs with clamping {clamped}")
    assert replay_bad == 0
    assert violations == 0


# ---- 7: truncation non-expansiveness -------------------------------------------

def test_c07_truncation_non_expansive(report):
    t0 = time.perf_counter()
    r = np.random.default_rng(707)
    box = Box([0.0], [1.0])
    accepted = drawn = violations = 0
    while accepted < 10_000:
        drawn += 1
        n = int(r.integers(2, 33))
        a = math.exp(r.uniform(-3, 3))
        b = a * math.exp(r.uniform(0.01, 3))
        g = a + r.uniform(0, 1, n) * (b - a)
        f = g * np.exp(r.normal(0, r.uniform(0.05, 2.0), n))
        inside = (f >= a) & (f <= b)
        if not inside.any():
            continue
        ratio = f[inside] / g[inside]
        if not (ratio.max() >= 1.0 >= ratio.min()):
            continue
        accepted += 1
        F, G = LatticeFunction(box, f), LatticeFunction(box, g)
        if hilbert_distance(truncate_clamp(F, a, b), G) > hilbert_distance(F, G) * (1 + 1e-12) + 1e-14:
            violations += 1
    elapsed = time.perf_counter() - t0
    ok = violations == 0 and elapsed < 5.0
    report(7, ok, f"{accepted} cases accepted from {drawn} draws, {violations} violations, "
                  f"{elapsed:.2f}s")
    assert violations == 0
    assert elapsed < 5.0


# ---- 8: FDD Brownian bridge ------------------------------------------------------

def test_c08_fdd_bridge(report):
    t0 = time.perf_counter()
    rows = {r["flag"]: r for r in experiments.fdd_bridge_rows(R=2000)}
    elapsed = time.perf_counter() - t0
    m2, one = rows["second_moment"], rows["one"]
    err = abs(m2["estimate"] - 0.25)
    ok = (err < 3 * m2["std_error"] and err <= 0.05 * 0.25
          and abs(one["estimate"] - 1.0) < 3 * one["std_error"] and elapsed < 120.0)
    report(8, ok, f"E[X_0.5^2] {m2['estimate']:.5f} +- {m2['std_error']:.5f} (0.25); "
                  f"g=1 gives {one['estimate']:.4f} +- {one['std_error']:.4f}; {elapsed:.1f}s")
    assert err < 3 * m2["std_error"]
    assert err <= 0.05 * 0.25
    assert abs(one["estimate"] - 1.0) < 3 * one["std_error"]
    assert elapsed < 120.0


# ---- 9: h-transform bridge ------------------------------------------------------

def test_c09_h_transform_bridge_mean(report):
    t0 = time.perf_counter()
    model = oracles.closed_form_model("brownian", 1, 1.0)
    z0 = 1.0
    target = LatticeFunction.constant(Box([z0 - 1e-3], [z0 + 1e-3]), (3,))
    times, states = bridge.h_transform_simulate(model, target, densities.Atom([0.0]), 64, 10_000,
                                                master_seed=0, delta_cap=0.05, record_times=[0.5])
    elapsed = time.perf_counter() - t0
    x = states[:, list(times).index(0.5), 0]
    mean, se = float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))
    ok = abs(mean - z0 / 2) < 3 * se and elapsed < 60.0
    report(9, ok, f"E[X_0.5] {mean:.4f} +- {se:.4f} (target {z0 / 2}), {elapsed:.1f}s")
    assert abs(mean - z0 / 2) < 3 * se
    assert elapsed < 60.0


# ---- 10: byte-identical outputs ------------------------------------------------

def _run_experiment(name, path, threads):
    env = {**os.environ, "SBFR_THREADS": str(threads)}
    subprocess.run([sys.executable, "-m", "sbfr.experiments", name, str(path)],
                   check=True, env=env, capture_output=True)
    return path.read_bytes()


def test_c10_reproducible_outputs(report, tmp_path):
    differing = []
    for name in ("reverse", "fr_density", "rate", "fdd"):
        first = _run_experiment(name, tmp_path / f"{name}-1a.csv", 1)
        again = _run_experiment(name, tmp_path / f"{name}-1b.csv", 1)
        wide = _run_experiment(name, tmp_path / f"{name}-4.csv", 4)
        if not (first == again == wide) or first.count(b"\n") < 2:
            differing.append(name)
    ok = not differing
    report(10, ok, "reverse, fr_density, rate, fdd CSVs byte-identical over reruns and "
                   "SBFR_THREADS 1/4" + (f"; differing: {differing}" if differing else ""))
    assert not differing


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
