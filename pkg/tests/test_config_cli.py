import csv
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbfr import cli
from sbfr.config import emit_config, load_config, parse_config, replace_section
from sbfr.errors import ConfigError
from sbfr.io import FDD_COLUMNS, STUDY_COLUMNS, load_potential

SOLVE_CFG = """\
[run]
command = solve
seed = 3

[model]
kind = brownian
sigma = 1.0

[marginals]
rho0 = polynomial
rho0_coeffs = 1 1 -0.5
rhoT = polynomial
rhoT_coeffs = 1.5 -1 0.8

[solver]
N = 2000
steps = 1
lattice_nodes = 17
residual_paths = 500
"""


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def events(out):
    return [json.loads(ln) for ln in (out / "run.jsonl").read_text().splitlines()]


# ---- configuration -------------------------------------------------------------

def test_empty_config_reports_missing_command():
    with pytest.raises(ConfigError, match="missing command"):
        parse_config("")


def test_duplicate_key_names_both_lines():
    text = "[run]\ncommand = solve\n\n[solver]\nN = 100\nN = 200\n"
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == 6
    assert "first set on line 5" in str(info.value)


@pytest.mark.parametrize("text,line", [
    ("[run]\ncommand = solve\n[nope]\n", 3),
    ("[run]\ncommand = solve\n[solver]\nwidth = 3\n", 4),
    ("[run]\ncommand = solve\n[solver]\nN = many\n", 4),
    ("command = solve\n", 1),
    ("[run]\ncommand solve\n", 2),
    ("[run]\ncommand = solve\n[model]\nsigma = -1\n", 4),
    ("[run]\ncommand = solve\n[solver]\nq_min = 0.1\n", 4),
    ("[run]\ncommand = solve\n[model]\nsigma = nan\n", 4),
])
def test_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}: ")


def test_cli_command_fills_or_conflicts():
    assert parse_config("[solver]\nN = 100\n", command="study").command == "study"
    assert parse_config("[run]\ncommand = fdd\n", command="fdd").command == "fdd"
    with pytest.raises(ConfigError, match="conflicts"):
        parse_config("[run]\ncommand = fdd\n", command="solve")


def test_missing_referenced_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("[run]\ncommand = solve\n[marginals]\nrho0 = lattice\nrho0_file = gone.txt\n")
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(p)


def test_comments_lists_and_none():
    cfg = parse_config("# top\n[run]\ncommand = study  # trailing\n[study]\nN_values = 100, 200 400\n"
                       "[solver]\nbandwidth = none\nresample = yes\n")
    assert cfg.study.N_values == (100, 200, 400)
    assert cfg.solver.bandwidth is None
    assert cfg.solver.resample is True


@given(st.integers(10, 10**6), st.floats(0.01, 10.0), st.integers(0, 2**31),
       st.sampled_from(["solve", "fdd", "study", "oracle"]), st.booleans())
def test_emit_then_parse_round_trips(N, sigma, seed, command, resample):
    cfg = parse_config(f"[run]\ncommand = {command}\nseed = {seed}\n")
    cfg = replace_section(cfg, "solver", N=N, resample=resample)
    cfg = replace_section(cfg, "model", sigma=sigma)
    assert parse_config(emit_config(cfg)) == cfg


# ---- command line --------------------------------------------------------------

def test_solve_end_to_end(tmp_path):
    cfgp = tmp_path / "solve.cfg"
    cfgp.write_text(SOLVE_CFG)
    out = tmp_path / "out"
    assert cli.main(["solve", "--config", str(cfgp), "--out", str(out)]) == cli.EXIT_OK
    g = load_potential(out / "g_hat.txt")
    assert g.shape == (17,)
    assert g.integral() == pytest.approx(1.0, abs=1e-10)
    trace = read_csv(out / "trace.csv")
    assert trace and list(trace[0]) == list(cli.TRACE_COLUMNS)
    res = read_csv(out / "residuals.csv")
    assert {r["side"] for r in res} == {"0", "T"}
    ev = events(out)
    assert [e["event"] for e in ev] == ["start", "solve", "finish"]
    assert ev[0]["command"] == "solve" and ev[0]["seed"] == 3
    assert {"python", "numpy", "scipy", "backend", "threads"} <= set(ev[0])


def test_solve_output_is_rerun_identical(tmp_path):
    cfgp = tmp_path / "solve.cfg"
    cfgp.write_text(SOLVE_CFG)
    for name in ("a", "b"):
        assert cli.main(["solve", "--config", str(cfgp), "--out", str(tmp_path / name)]) == 0
    for f in ("g_hat.txt", "nu0.txt", "nuT.txt", "trace.csv", "residuals.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_solve_hitting_cap_exits_numerical(tmp_path):
    cfgp = tmp_path / "solve.cfg"
    cfgp.write_text(SOLVE_CFG + "k_max = 1\nstop_tol = 1e-15\n")
    out = tmp_path / "out"
    assert cli.main(["solve", "--config", str(cfgp), "--out", str(out)]) == cli.EXIT_NUMERICAL
    assert events(out)[-1]["event"] == "error"
    assert (out / "g_hat.txt").exists()


def test_config_error_exit_code(tmp_path, capsys):
    cfgp = tmp_path / "bad.cfg"
    cfgp.write_text("[run]\ncommand = solve\n[solver]\nN = 5\nN = 6\n")
    assert cli.main(["solve", "--config", str(cfgp)]) == cli.EXIT_CONFIG
    assert "line 5" in capsys.readouterr().err


def test_unreadable_config_exit_code(tmp_path):
    assert cli.main(["solve", "--config", str(tmp_path / "none.cfg")]) == cli.EXIT_CONFIG


def test_fdd_single_replication(tmp_path):
    cfgp = tmp_path / "fdd.cfg"
    cfgp.write_text("[run]\ncommand = fdd\n[fdd]\nR = 1\nepsilon = 2.0\nfunctional = one\n")
    out = tmp_path / "out"
    assert cli.main(["fdd", "--config", str(cfgp), "--out", str(out)]) == 0
    (row,) = read_csv(out / "fdd.csv")
    assert list(row) == list(FDD_COLUMNS)
    assert float(row["std_error"]) == 0.0
    assert row["flag"] == "single_replication"


def test_fdd_from_potential_files(tmp_path):
    cfgp = tmp_path / "solve.cfg"
    cfgp.write_text(SOLVE_CFG)
    sol_out = tmp_path / "sol"
    assert cli.main(["solve", "--config", str(cfgp), "--out", str(sol_out)]) == 0
    fcfg = tmp_path / "fdd.cfg"
    fcfg.write_text("[run]\ncommand = fdd\n[fdd]\nR = 400\nfunctional = one\nnu0 = file\n"
                    "nu0_file = sol/nu0.txt\nnuT = file\nnuT_file = sol/nuT.txt\naux_paths = 20000\n")
    out = tmp_path / "fdd"
    assert cli.main(["fdd", "--config", str(fcfg), "--out", str(out)]) == 0
    (row,) = read_csv(out / "fdd.csv")
    est, se = float(row["estimate"]), float(row["std_error"])
    assert abs(est - 1.0) < 4 * se


def test_fdd_no_overlap_exits_numerical(tmp_path):
    cfgp = tmp_path / "fdd.cfg"
    cfgp.write_text("[run]\ncommand = fdd\n[model]\nsigma = 0.001\n[fdd]\nR = 20\nepsilon = 0.01\n"
                    "nuT_point = 1.0\nfunctional = one\n")
    assert cli.main(["fdd", "--config", str(cfgp), "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERICAL


def test_study_schema(tmp_path):
    cfgp = tmp_path / "study.cfg"
    cfgp.write_text("[run]\ncommand = study\n[solver]\nsteps = 1\nlattice_nodes = 17\n"
                    "[study]\nN_values = 200 400\nseeds = 2\noracle_nodes = 101\n")
    out = tmp_path / "out"
    assert cli.main(["study", "--config", str(cfgp), "--out", str(out)]) == 0
    rows = read_csv(out / "study.csv")
    assert len(rows) == 4
    assert list(rows[0]) == list(STUDY_COLUMNS)
    assert {int(r["N"]) for r in rows} == {200, 400}
    assert all(float(r["runtime_ms"]) == 0.0 for r in rows)
    assert "slope" in events(out)[1]


def test_oracle_command(tmp_path):
    cfgp = tmp_path / "oracle.cfg"
    cfgp.write_text("[run]\ncommand = oracle\n[solver]\nN = 1000\nsteps = 1\n[oracle]\nnodes = 33\n")
    out = tmp_path / "out"
    assert cli.main(["oracle", "--config", str(cfgp), "--out", str(out)]) == 0
    ev = [e for e in events(out) if e["event"] == "oracle"][0]
    assert max(ev["residual_sup0"], ev["residual_supT"]) < 1e-10
    g = load_potential(out / "oracle_g.txt")
    assert g.shape == (33,)
    (row,) = read_csv(out / "oracle_compare.csv")
    assert float(row["dH_to_oracle"]) < 0.5


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.startswith("sbfr ")
