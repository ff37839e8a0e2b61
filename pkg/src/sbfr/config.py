"""Sectioned ``key = value`` run configuration with line-numbered diagnostics.

Format::

    # comment
    [run]
    command = solve
    seed = 7

    [model]
    kind = brownian

Lists are whitespace separated; ``none`` clears an optional value.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

from .errors import ConfigError

__all__ = ["RunConfig", "parse_config", "load_config", "emit_config", "COMMANDS"]

COMMANDS = ("solve", "fdd", "study", "oracle")
MARGINAL_KINDS = ("uniform", "polynomial", "lattice")
POTENTIAL_KINDS = ("atom", "file", "solve")
FUNCTIONALS = ("one", "second_moment", "mean", "endpoint_product")


@dataclass(frozen=True)
class RunSection:
    command: Optional[str] = None
    seed: int = 0


@dataclass(frozen=True)
class ModelSection:
    kind: str = "brownian"
    dim: int = 1
    sigma: float = 1.0
    theta: float = 0.0
    T: float = 1.0


@dataclass(frozen=True)
class MarginalsSection:
    box0_lo: Tuple[float, ...] = (0.0,)
    box0_hi: Tuple[float, ...] = (1.0,)
    boxT_lo: Tuple[float, ...] = (0.0,)
    boxT_hi: Tuple[float, ...] = (1.0,)
    rho0: str = "uniform"
    rho0_coeffs: Tuple[float, ...] = ()
    rho0_file: str = ""
    rhoT: str = "uniform"
    rhoT_coeffs: Tuple[float, ...] = ()
    rhoT_file: str = ""


@dataclass(frozen=True)
class SolverSection:
    N: int = 4000
    steps: int = 64
    alpha: float = 1.0
    bandwidth: Optional[float] = None
    k_max: Optional[int] = None
    stop_tol: float = 1e-8
    lattice_nodes: int = 64
    mode: str = "self_normalized"
    resample: bool = False
    residual_paths: int = 1000
    q_min: Optional[float] = None
    q_max: Optional[float] = None
    Q_min: Optional[float] = None
    Q_max: Optional[float] = None
    rho_min: Optional[float] = None
    rho_max: Optional[float] = None


@dataclass(frozen=True)
class FddSection:
    R: int = 2000
    t_star: Optional[float] = None
    epsilon: Optional[float] = None
    functional: str = "second_moment"
    aux_paths: int = 20000
    steps: int = 64
    nu0: str = "atom"
    nu0_point: Tuple[float, ...] = (0.0,)
    nu0_file: str = ""
    nuT: str = "atom"
    nuT_point: Tuple[float, ...] = (0.0,)
    nuT_file: str = ""


@dataclass(frozen=True)
class StudySection:
    N_values: Tuple[int, ...] = (500, 1000, 2000, 4000, 8000)
    seeds: int = 10
    oracle_nodes: int = 401
    timings: bool = False


@dataclass(frozen=True)
class OracleSection:
    nodes: int = 64
    tol: float = 1e-13
    max_iter: int = 10000
    compare: bool = True


@dataclass(frozen=True)
class OutputSection:
    dir: str = "sbfr-out"


SECTIONS = {
    "run": RunSection,
    "model": ModelSection,
    "marginals": MarginalsSection,
    "solver": SolverSection,
    "fdd": FddSection,
    "study": StudySection,
    "oracle": OracleSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    marginals: MarginalsSection = field(default_factory=MarginalsSection)
    solver: SolverSection = field(default_factory=SolverSection)
    fdd: FddSection = field(default_factory=FddSection)
    study: StudySection = field(default_factory=StudySection)
    oracle: OracleSection = field(default_factory=OracleSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def command(self):
        return self.run.command

    @property
    def seed(self):
        return self.run.seed


def _convert(raw, annotation, key, line):
    """Parse ``raw`` according to a field annotation."""
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union:
        inner = [a for a in args if a is not type(None)][0]
        if raw.lower() == "none":
            return None
        return _convert(raw, inner, key, line)
    if origin is tuple:
        item = args[0]
        return tuple(_convert(tok, item, key, line) for tok in raw.replace(",", " ").split())
    try:
        if annotation is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if annotation is int:
            return int(raw)
        if annotation is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {annotation.__name__}", line) from None


def _hints(cls):
    return typing.get_type_hints(cls)


def parse_config(text, command=None, base_dir=None):
    """Parse and validate configuration text.

    ``command`` (from the CLI) fills in a missing ``[run] command``; a
    conflicting one is an error. Relative file paths resolve against
    ``base_dir``.
    """
    values = {name: {} for name in SECTIONS}
    where = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any section", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        hints = _hints(SECTIONS[section])
        if key not in hints:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if key in values[section]:
            first = where[(section, key)]
            raise ConfigError(f"duplicate key {key!r} in [{section}] (first set on line {first})",
                              lineno)
        values[section][key] = _convert(val, hints[key], key, lineno)
        where[(section, key)] = lineno

    run_vals = values["run"]
    if command is not None:
        if run_vals.get("command") not in (None, command):
            raise ConfigError(
                f"config command {run_vals['command']!r} conflicts with requested {command!r}",
                where.get(("run", "command")))
        run_vals["command"] = command
    if run_vals.get("command") is None:
        raise ConfigError("missing command", None)
    cfg = RunConfig(**{name: SECTIONS[name](**vals) for name, vals in values.items()})
    _validate(cfg, where, base_dir)
    return cfg


def load_config(path, command=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", None) from None
    return parse_config(text, command=command, base_dir=path.parent)


def _validate(cfg, where, base_dir):
    def fail(msg, section, key):
        raise ConfigError(msg, where.get((section, key)))

    if cfg.run.command not in COMMANDS:
        fail(f"unknown command {cfg.run.command!r}; expected one of {', '.join(COMMANDS)}",
             "run", "command")
    m = cfg.model
    if m.kind not in ("brownian", "ou"):
        fail(f"model kind {m.kind!r} is not supported (brownian or ou)", "model", "kind")
    if m.dim < 1:
        fail("dim must be positive", "model", "dim")
    if not m.sigma > 0:
        fail("sigma must be positive", "model", "sigma")
    if not m.T > 0:
        fail("T must be positive", "model", "T")
    mg = cfg.marginals
    for side in ("0", "T"):
        lo, hi = getattr(mg, f"box{side}_lo"), getattr(mg, f"box{side}_hi")
        if len(lo) != m.dim or len(hi) != m.dim:
            fail(f"box{side} needs {m.dim} bounds per end", "marginals", f"box{side}_lo")
        if any(b <= a for a, b in zip(lo, hi)):
            fail(f"box{side} needs lo < hi on every axis", "marginals", f"box{side}_hi")
        kind = getattr(mg, f"rho{side}")
        if kind not in MARGINAL_KINDS:
            fail(f"marginal kind {kind!r} unknown", "marginals", f"rho{side}")
        if kind == "polynomial" and not getattr(mg, f"rho{side}_coeffs"):
            fail(f"rho{side} polynomial needs coefficients", "marginals", f"rho{side}")
        if kind == "lattice":
            _check_file(getattr(mg, f"rho{side}_file"), base_dir, fail, "marginals", f"rho{side}_file")
    s = cfg.solver
    if s.N < 10:
        fail("N must be at least 10", "solver", "N")
    if s.steps < 1:
        fail("steps must be at least 1", "solver", "steps")
    if not (0 < s.alpha <= 1):
        fail("alpha must lie in (0, 1]", "solver", "alpha")
    if s.bandwidth is not None and not (0 < s.bandwidth < 1):
        fail("bandwidth must lie in (0, 1)", "solver", "bandwidth")
    if s.k_max is not None and s.k_max < 1:
        fail("k_max must be at least 1", "solver", "k_max")
    if not s.stop_tol > 0:
        fail("stop_tol must be positive", "solver", "stop_tol")
    if s.lattice_nodes < 2:
        fail("lattice_nodes must be at least 2", "solver", "lattice_nodes")
    if s.mode not in ("self_normalized", "direct"):
        fail(f"unknown mode {s.mode!r}", "solver", "mode")
    if s.residual_paths < 1:
        fail("residual_paths must be at least 1", "solver", "residual_paths")
    bnames = ("q_min", "q_max", "Q_min", "Q_max", "rho_min", "rho_max")
    given = [getattr(s, n) is not None for n in bnames]
    if any(given) and not all(given):
        fail("give all six bounds or none", "solver", bnames[given.index(True)])
    for n in bnames:
        v = getattr(s, n)
        if v is not None and not v > 0:
            fail(f"{n} must be positive", "solver", n)
    f = cfg.fdd
    if f.R < 1:
        fail("R must be at least 1", "fdd", "R")
    if f.t_star is not None and not (0 < f.t_star < m.T):
        fail("t_star must lie in (0, T)", "fdd", "t_star")
    if f.epsilon is not None and not f.epsilon > 0:
        fail("epsilon must be positive", "fdd", "epsilon")
    if f.functional not in FUNCTIONALS:
        fail(f"unknown functional {f.functional!r}", "fdd", "functional")
    if f.aux_paths < 1 or f.steps < 1:
        fail("aux_paths and steps must be positive", "fdd", "aux_paths")
    for side in ("0", "T"):
        kind = getattr(f, f"nu{side}")
        if kind not in POTENTIAL_KINDS:
            fail(f"potential kind {kind!r} unknown", "fdd", f"nu{side}")
        if kind == "atom" and len(getattr(f, f"nu{side}_point")) != m.dim:
            fail(f"nu{side}_point needs {m.dim} coordinates", "fdd", f"nu{side}_point")
        if kind == "file":
            _check_file(getattr(f, f"nu{side}_file"), base_dir, fail, "fdd", f"nu{side}_file")
    st = cfg.study
    if not st.N_values or any(n < 10 for n in st.N_values):
        fail("N_values must be a nonempty list of sizes >= 10", "study", "N_values")
    if st.seeds < 1 or st.oracle_nodes < 2:
        fail("seeds and oracle_nodes must be positive", "study", "seeds")
    o = cfg.oracle
    if o.nodes < 2 or not o.tol > 0 or o.max_iter < 1:
        fail("oracle needs nodes >= 2, tol > 0 and max_iter >= 1", "oracle", "nodes")


def _check_file(name, base_dir, fail, section, key):
    if not name:
        fail(f"{key} is required", section, key)
    p = Path(name)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    if not p.exists():
        fail(f"referenced file {name!r} does not exist", section, key)


def resolve_path(name, base_dir):
    p = Path(name)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


def _format(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return " ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_config(cfg: RunConfig) -> str:
    """Canonical text: every section and key in declaration order."""
    out = []
    for name in SECTIONS:
        sec = getattr(cfg, name)
        out.append(f"[{name}]")
        for f_ in fields(sec):
            out.append(f"{f_.name} = {_format(getattr(sec, f_.name))}")
        out.append("")
    return "\n".join(out)


def replace_section(cfg, section, **changes):
    return dataclasses.replace(cfg, **{section: dataclasses.replace(getattr(cfg, section), **changes)})
