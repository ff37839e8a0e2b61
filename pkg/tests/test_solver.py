import logging
import math

import numpy as np
import pytest

from sbfr import densities, experiments, oracles, solver
from sbfr.errors import DomainError
from sbfr.kernels import BoundsConfig, build_clouds
from sbfr.lattice import Box, LatticeFunction, hilbert_distance, l1_normalize, lattice_nodes
from sbfr.solver import (
    SolverConfig,
    apply_C_hat,
    estimate_contraction,
    marginal_residuals,
    picard_solve,
    potentials_from_g,
)


@pytest.fixture(scope="module")
def fixture():
    return experiments.brownian_fixture()


@pytest.fixture(scope="module")
def clouds(fixture):
    m, rho0, rhoT = fixture
    b = oracles.oracle_bounds(m, rho0, rhoT, rho0.box, rhoT.box)
    return build_clouds(m, rho0, rhoT, 4000, b, steps=1, master_seed=2)


@pytest.fixture(scope="module")
def big_solution(fixture):
    m, rho0, rhoT = fixture
    return picard_solve(m, rho0, rhoT, SolverConfig(N=100_000, steps=1))


@pytest.mark.parametrize("mode", ["self_normalized", "direct"])
def test_C_hat_is_positively_homogeneous(clouds, rng, mode):
    f = LatticeFunction(clouds.boxT, rng.uniform(0.5, 2.0, 64))
    a = apply_C_hat(clouds, f, mode)
    b = apply_C_hat(clouds, f.with_values(17.0 * f.values), mode)
    # two reciprocals make the map homogeneous of degree one
    np.testing.assert_allclose(b.values, 17.0 * a.values, rtol=1e-12)
    assert hilbert_distance(a, b) < 1e-12


def test_C_hat_output_is_positive_and_bounded(clouds, rng):
    b = clouds.bounds
    for _ in range(10):
        f = LatticeFunction(clouds.boxT, rng.uniform(0.1, 5.0, 64))
        out = apply_C_hat(clouds, f)
        assert np.all(out.values > 0)
        # inner stage is bounded by the bounds times f's range, so 1/u is too
        u_lo = b.Q_min * b.rho_min / f.max()
        u_hi = b.Q_max * b.rho_max / f.min()
        assert out.min() >= b.Q_min * b.rho_min / u_hi * (1 - 1e-12)
        assert out.max() <= b.Q_max * b.rho_max / u_lo * (1 + 1e-12)


def test_C_hat_approaches_grid_operator(fixture):
    m, rho0, rhoT = fixture
    b = oracles.oracle_bounds(m, rho0, rhoT, rho0.box, rhoT.box)
    p = oracles.GridProblem.from_model(m, rho0.pdf, rhoT.pdf, rho0.box, rhoT.box, 257)
    f = LatticeFunction.from_function(rhoT.box, 64, lambda z: 1.0 + 0.5 * np.sin(3 * z[:, 0]))
    nodes = f.nodes()
    # grid C with the fine lattice, read off at the coarse nodes
    inner = p.forward(1.0 / f(p.z))
    exact = oracles.kernel_matrix(m, p.x, nodes).T @ (p.rho0 * p.w0 / inner)
    errs = []
    for N in (1000, 10_000, 100_000):
        c = build_clouds(m, rho0, rhoT, N, b, steps=1, master_seed=1)
        errs.append(np.max(np.abs(apply_C_hat(c, f).values / exact - 1)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.05


def test_C_hat_rejects_nonpositive(clouds):
    f = LatticeFunction.constant(clouds.boxT, (8,))
    f.values[3] = 0.0
    with pytest.raises(DomainError):
        apply_C_hat(clouds, f)


def test_estimate_contraction_examples():
    geo = [0.5**k for k in range(6)]
    assert estimate_contraction(geo, 0.9) == pytest.approx(0.5)
    assert estimate_contraction([1.0, 0.95, 0.97, 0.99], 0.3) == pytest.approx(0.3)
    assert estimate_contraction([0.4, 0.0, 0.0, 0.0], 0.3) == pytest.approx(0.01)
    with pytest.raises(DomainError):
        estimate_contraction([1.0, 0.5], 0.3)


def test_flat_kernel_oracle_clamps_contraction():
    p = oracles.GridProblem([0.0, 1.0], [0.0, 1.0], [1, 1], [1, 1], [0.6, 0.4], [0.3, 0.7],
                            np.ones((2, 2)))
    g = np.array([0.9, 0.1])
    incs = []
    for _ in range(4):
        new = oracles.grid_C(p, g)
        new = new / new.sum()
        incs.append(math.log(np.max(new / g) / np.min(new / g)))
        g = new
    assert incs[1] == 0.0
    assert estimate_contraction(incs, oracles.birkhoff_ceiling(1.0, 1.0 + 1e-9)) == 0.01


def test_solution_invariants(fixture):
    m, rho0, rhoT = fixture
    sol = picard_solve(m, rho0, rhoT, SolverConfig(N=2000, steps=1))
    b = sol.config.bounds
    t = sol.trace
    assert t.converged and t.stopped_by in ("tolerance", "rate_cap")
    assert all(t.straddles)
    assert sol.g_hat.min() >= b.g_star_min and sol.g_hat.max() <= b.g_star_max
    assert abs(sol.g_hat.integral() - 1.0) < 1e-10
    assert sol.nu_T.min() > 0 and sol.nu_0.min() > 0
    assert sol.nu_T.min() >= b.rho_min / b.g_star_max * (1 - 1e-12)
    assert sol.nu_T.max() <= b.rho_max / b.g_star_min * (1 + 1e-12)
    assert t.iterations == len(t.l1_norms) == len(t.clamp_fractions)


def test_user_cap_is_reported_not_raised(fixture):
    m, rho0, rhoT = fixture
    sol = picard_solve(m, rho0, rhoT, SolverConfig(N=500, steps=1, k_max=1))
    assert not sol.converged and sol.trace.stopped_by == "cap"
    assert sol.g_hat.min() > 0


def test_clamp_saturation_is_logged(fixture, caplog):
    m, rho0, rhoT = fixture
    b = oracles.oracle_bounds(m, rho0, rhoT, rho0.box, rhoT.box)
    # collapse the admissible range so most nodes saturate
    mid = 0.5 * (b.g_star_min + b.g_star_max)
    tight = BoundsConfig(1.0, 1.0001, 1.0 / mid, 1.0 / mid, b.rho_min, b.rho_max)
    with caplog.at_level(logging.WARNING, logger="sbfr.solver"):
        picard_solve(m, rho0, rhoT, SolverConfig(N=500, steps=1, bounds=tight, k_max=2))
    assert any("saturates" in r.message for r in caplog.records)


def test_potentials_for_proportional_g(clouds):
    gT = LatticeFunction.from_function(clouds.boxT, 64, clouds.rhoT.pdf)
    _, nuT = potentials_from_g(clouds, gT, clouds.rho0, clouds.rhoT)
    np.testing.assert_allclose(nuT.values, nuT.values[0], rtol=1e-12)


def test_consistency_fixture_recovers_image_density():
    m = oracles.closed_form_model("brownian", 1)
    box = Box([0.0], [1.0])
    rho0 = densities.PolynomialDensity(box, [(1.0, 1.0, -0.5)])
    x = lattice_nodes(box, (801,))
    w = np.full(801, 1 / 800)
    w[[0, -1]] /= 2
    Q = m.forward_box_mass(x, box)
    z = lattice_nodes(box, (129,))
    image = oracles.kernel_matrix(m, x, z).T @ (w * rho0.pdf(x) / Q)
    rhoT = densities.LatticeDensity(LatticeFunction(box, image))
    target = LatticeFunction.from_function(box, 64, rhoT.pdf)
    # the construction really is a fixed point: the grid oracle lands on it
    p = oracles.GridProblem.from_model(m, rho0.pdf, rhoT.pdf, box, box, 401)
    g = oracles.grid_fixed_point(p).g_at(m, target.nodes())
    assert hilbert_distance(target.with_values(g), target) < 1e-4
    dist = [np.mean([hilbert_distance(picard_solve(m, rho0, rhoT, SolverConfig(
        N=N, steps=1, master_seed=s)).g_hat, target) for s in range(3)])
        for N in (1000, 4000, 16000)]
    assert dist[0] > dist[1] > dist[2]


def test_sup_error_to_oracle_shrinks(fixture):
    m, rho0, rhoT = fixture
    gstar, _ = experiments.oracle_on_lattice(m, rho0, rhoT, 401, 64)
    errs = []
    for N in (1000, 4000, 16000):
        errs.append(np.mean([np.max(np.abs(picard_solve(m, rho0, rhoT, SolverConfig(
            N=N, steps=1, master_seed=s)).g_hat.values - gstar.values)) for s in range(3)]))
    assert errs[0] > errs[1] > errs[2]


def test_residuals_small_at_large_N(fixture, big_solution):
    m = fixture[0]
    rep = marginal_residuals(m, big_solution, 20_000, master_seed=5, steps=1)
    assert rep.sup < 0.05


def test_residuals_invariant_under_potential_rescaling(fixture, big_solution):
    m = fixture[0]
    rep = marginal_residuals(m, big_solution, 200, master_seed=1, steps=1)
    s = big_solution
    scaled = solver.SchrodingerSolution(s.g_hat, s.nu_T.with_values(s.nu_T.values / 3.0),
                                        s.nu_0.with_values(3.0 * s.nu_0.values), s.trace,
                                        s.clouds, s.config)
    rep2 = marginal_residuals(m, scaled, 200, master_seed=1, steps=1)
    np.testing.assert_allclose(rep2.r0, rep.r0, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(rep2.rT, rep.rT, rtol=1e-10, atol=1e-13)
    with pytest.raises(DomainError):
        marginal_residuals(m, s, 0)


def test_rescaled_marginal_changes_potential_by_constant():
    m = oracles.closed_form_model("brownian", 1)
    box = Box([0.0], [1.0])
    rho0 = densities.UniformDensity(box)
    base = LatticeFunction.from_function(box, 33, lambda z: 1 + z[:, 0] ** 2)
    out = []
    for c in (1.0, 5.0):
        rhoT = densities.LatticeDensity(base.with_values(c * base.values))
        out.append(picard_solve(m, rho0, rhoT, SolverConfig(N=1000, steps=1)).nu_T)
    assert hilbert_distance(out[0], out[1]) < 1e-12


def test_resampling_uses_fresh_clouds(fixture):
    m, rho0, rhoT = fixture
    a = picard_solve(m, rho0, rhoT, SolverConfig(N=500, steps=1, k_max=3))
    b = picard_solve(m, rho0, rhoT, SolverConfig(N=500, steps=1, k_max=3, resample_per_iteration=True))
    assert a.trace.increments[0] == b.trace.increments[0]
    assert a.trace.increments[1] != b.trace.increments[1]


@pytest.mark.parametrize("kw", [dict(N=5), dict(k_max=0), dict(stop_tol=0.0), dict(alpha=1.5),
                                dict(lattice_nodes=1), dict(mode="other"), dict(steps=0)])
def test_config_validation(kw):
    with pytest.raises(DomainError):
        SolverConfig(**kw)


def test_solver_normalizer_is_trapezoid(clouds):
    f, norm = l1_normalize(LatticeFunction.constant(clouds.boxT, 64, 4.0))
    assert norm == pytest.approx(4.0)
