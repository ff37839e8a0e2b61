"""Command-line entry point: ``sbfr {solve,fdd,study,oracle} --config FILE``.

Exit codes: 0 success, 1 numerical failure (non-convergence, vanished
overlap, exploding paths), 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__, _backend, bridge, densities, experiments, oracles, solver
from .config import COMMANDS, load_config, resolve_path
from .errors import (
    ConfigError,
    ConvergenceError,
    InsufficientOverlapError,
    PathologicalEnvelopeError,
    SBFRError,
    SimulationExplosionError,
    WeightOverflowError,
)
from .io import (
    FDD_COLUMNS,
    STUDY_COLUMNS,
    RunLog,
    dump_potential,
    load_potential,
    write_grid_problem,
    write_rows,
)
from .kernels import BoundsConfig
from .lattice import Box, LatticeFunction, hilbert_distance

__all__ = ["main", "execute", "build_model", "build_marginal"]

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2
NUMERICAL_ERRORS = (ConvergenceError, InsufficientOverlapError, SimulationExplosionError,
                    WeightOverflowError, PathologicalEnvelopeError)

log = logging.getLogger("sbfr")


def build_model(cfg):
    m = cfg.model
    return oracles.closed_form_model(m.kind, m.dim, m.sigma, m.theta, m.T)


def build_marginal(cfg, side, base_dir=None):
    mg = cfg.marginals
    box = Box(getattr(mg, f"box{side}_lo"), getattr(mg, f"box{side}_hi"))
    kind = getattr(mg, f"rho{side}")
    if kind == "uniform":
        return densities.UniformDensity(box)
    if kind == "polynomial":
        return densities.PolynomialDensity(box, [getattr(mg, f"rho{side}_coeffs")])
    func = load_potential(resolve_path(getattr(mg, f"rho{side}_file"), base_dir))
    if func.box != box:
        raise ConfigError(f"rho{side}_file lattice box {func.box!r} differs from box{side}")
    return densities.LatticeDensity(func)


def _bounds(cfg):
    s = cfg.solver
    if s.q_min is None:
        return None
    return BoundsConfig(s.q_min, s.q_max, s.Q_min, s.Q_max, s.rho_min, s.rho_max)


def solver_config(cfg, lattice_nodes=None):
    s = cfg.solver
    return solver.SolverConfig(
        N=s.N, steps=s.steps, alpha=s.alpha, bandwidth=s.bandwidth, bounds=_bounds(cfg),
        k_max=s.k_max, stop_tol=s.stop_tol, master_seed=cfg.seed,
        resample_per_iteration=s.resample, lattice_nodes=lattice_nodes or s.lattice_nodes,
        mode=s.mode)


def _trace_rows(trace):
    return [{"iteration": i + 1, "increment": inc, "l1_norm": trace.l1_norms[i],
             "clamp_fraction": trace.clamp_fractions[i], "straddles": trace.straddles[i]}
            for i, inc in enumerate(trace.increments)]


TRACE_COLUMNS = ("iteration", "increment", "l1_norm", "clamp_fraction", "straddles")
RESIDUAL_COLUMNS = ("side", "node", "residual")


def _run_solve(cfg, base_dir, out, rlog):
    model = build_model(cfg)
    rho0, rhoT = build_marginal(cfg, "0", base_dir), build_marginal(cfg, "T", base_dir)
    sol = solver.picard_solve(model, rho0, rhoT, solver_config(cfg))
    dump_potential(sol.g_hat, out / "g_hat.txt")
    dump_potential(sol.nu_0, out / "nu0.txt")
    dump_potential(sol.nu_T, out / "nuT.txt")
    write_rows(out / "trace.csv", TRACE_COLUMNS, _trace_rows(sol.trace))
    rep = solver.marginal_residuals(model, sol, cfg.solver.residual_paths, master_seed=cfg.seed)
    rows = [{"side": "0", "node": i, "residual": r} for i, r in enumerate(rep.r0)]
    rows += [{"side": "T", "node": i, "residual": r} for i, r in enumerate(rep.rT)]
    write_rows(out / "residuals.csv", RESIDUAL_COLUMNS, rows)
    t = sol.trace
    rlog.event("solve", iterations=t.iterations, converged=t.converged, stopped_by=t.stopped_by,
               kappa_hat=t.kappa_hat, k_max=t.k_max, bandwidth=sol.clouds.bandwidth,
               residual_sup0=rep.sup0, residual_supT=rep.supT,
               residual_mean0=rep.mean0, residual_meanT=rep.meanT)
    if not t.converged:
        raise ConvergenceError(f"Picard iteration hit its cap after {t.iterations} steps",
                               sol, t.increments[-1])
    return sol


def _functional(name, K):
    if name == "one":
        return None
    if name == "second_moment":
        return lambda s: np.sum(s[:, K, :] ** 2, axis=1)
    if name == "mean":
        return lambda s: s[:, K, 0]
    return lambda s: s[:, 0, 0] * s[:, -1, 0]


def _potential(cfg, side, base_dir, solved):
    f = cfg.fdd
    kind = getattr(f, f"nu{side}")
    if kind == "atom":
        return densities.Atom(getattr(f, f"nu{side}_point"))
    if kind == "file":
        return bridge.PotentialSampler(load_potential(resolve_path(getattr(f, f"nu{side}_file"),
                                                                   base_dir)))
    return bridge.PotentialSampler(solved.nu_0 if side == "0" else solved.nu_T)


def _run_fdd(cfg, base_dir, out, rlog):
    f = cfg.fdd
    model = build_model(cfg)
    solved = None
    if "solve" in (f.nu0, f.nuT):
        solved = _run_solve(cfg, base_dir, out, rlog)
    nu0 = _potential(cfg, "0", base_dir, solved)
    nuT = _potential(cfg, "T", base_dir, solved)
    part = bridge.TimePartition.build(model.T, f.t_star)
    query = bridge.FddQuery(_functional(f.functional, part.K), part, f.R, f.epsilon, f.aux_paths)
    res = bridge.fdd_schrodinger_estimate(model, nu0, nuT, query, master_seed=cfg.seed,
                                          steps=f.steps)
    row = {"R": f.R, "seed": cfg.seed, "epsilon": res.epsilon, "t_star": part.t_star,
           "estimate": res.estimate, "std_error": res.std_error, "c0T": res.c0T,
           "flag": res.flag}
    write_rows(out / "fdd.csv", FDD_COLUMNS, [row])
    rlog.event("fdd", functional=f.functional, pairs=res.pairs, **row)
    return res


def _run_study(cfg, base_dir, out, rlog):
    model = build_model(cfg)
    rho0, rhoT = build_marginal(cfg, "0", base_dir), build_marginal(cfg, "T", base_dir)
    st = cfg.study
    base = solver_config(cfg)
    rows = experiments.rate_study_rows(model, rho0, rhoT, st.N_values, st.seeds, base=base,
                                       oracle_nodes=st.oracle_nodes, timings=st.timings,
                                       bounds=base.bounds, seed_offset=cfg.seed)
    write_rows(out / "study.csv", STUDY_COLUMNS, rows)
    slope = experiments.rate_slope(rows)
    rlog.event("study", rows=len(rows), slope=slope)
    return rows


def _run_oracle(cfg, base_dir, out, rlog):
    model = build_model(cfg)
    rho0, rhoT = build_marginal(cfg, "0", base_dir), build_marginal(cfg, "T", base_dir)
    o = cfg.oracle
    p = oracles.GridProblem.from_model(model, rho0.pdf, rhoT.pdf, rho0.box, rhoT.box, o.nodes)
    write_grid_problem(p, out / "grid_problem.csv")
    sol = oracles.grid_fixed_point(p, tol=o.tol, max_iter=o.max_iter)
    g = LatticeFunction(rhoT.box, sol.g.reshape(p.shapeT))
    dump_potential(g, out / "oracle_g.txt")
    dump_potential(LatticeFunction(rho0.box, sol.nu0.reshape(p.shape0)), out / "oracle_nu0.txt")
    dump_potential(LatticeFunction(rhoT.box, sol.nuT.reshape(p.shapeT)), out / "oracle_nuT.txt")
    r0, rT = oracles.grid_residuals(p, sol.nu0, sol.nuT)
    rlog.event("oracle", iterations=sol.iterations, residual_sup0=r0, residual_supT=rT)
    if o.compare:
        sc = solver_config(cfg, lattice_nodes=o.nodes)
        t0 = time.perf_counter()
        est = solver.picard_solve(model, rho0, rhoT, sc)
        ms = 1000.0 * (time.perf_counter() - t0)
        row = {"N": sc.N, "seed": cfg.seed, "iterations": est.trace.iterations,
               "dH_to_oracle": hilbert_distance(est.g_hat, g),
               "sup_error": float(np.max(np.abs(est.g_hat.values - g.values))),
               "kappa_hat": float("nan") if est.trace.kappa_hat is None else est.trace.kappa_hat,
               "bandwidth": est.clouds.bandwidth,
               "runtime_ms": round(ms, 3) if cfg.study.timings else 0}
        write_rows(out / "oracle_compare.csv", STUDY_COLUMNS, [row])
        rlog.event("compare", **row)
    return sol


RUNNERS = {"solve": _run_solve, "fdd": _run_fdd, "study": _run_study, "oracle": _run_oracle}


def _environment():
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "sbfr": __version__, "backend": _backend.BACKEND,
            "threads": _backend.thread_count()}


def execute(cfg, base_dir=None, out_dir=None):
    """Run a parsed config; returns the process exit code."""
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    out = Path(out_dir) if out_dir is not None else resolve_path(cfg.output.dir, base_dir)
    out.mkdir(parents=True, exist_ok=True)
    rlog = RunLog(out / "run.jsonl")
    rlog.event("start", command=cfg.command, seed=cfg.seed, **_environment())
    t0 = time.perf_counter()
    try:
        RUNNERS[cfg.command](cfg, base_dir, out, rlog)
    except ConfigError as exc:
        rlog.event("error", kind="config", message=str(exc))
        print(f"sbfr: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        rlog.event("error", kind=type(exc).__name__, message=str(exc))
        print(f"sbfr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SBFRError as exc:
        rlog.event("error", kind=type(exc).__name__, message=str(exc))
        print(f"sbfr: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    rlog.event("finish", wall_ms=round(1000.0 * (time.perf_counter() - t0), 3))
    return EXIT_OK


def _parser():
    p = argparse.ArgumentParser(prog="sbfr", description="Schrodinger bridge solver and "
                                "forward-reverse path estimators.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"solve": "estimate the bridge potentials by Picard iteration",
             "fdd": "estimate a finite-dimensional path functional",
             "study": "convergence-rate study against the grid oracle",
             "oracle": "deterministic grid fixed point (and optional comparison)"}
    for name in COMMANDS:
        sp = sub.add_parser(name, help=helps[name])
        sp.add_argument("--config", required=True, help="run configuration file")
        sp.add_argument("--out", help="output directory (overrides [output] dir)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, command=args.command)
    except ConfigError as exc:
        print(f"sbfr: config error in {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return execute(cfg, Path(args.config).resolve().parent, args.out)


if __name__ == "__main__":
    sys.exit(main())
