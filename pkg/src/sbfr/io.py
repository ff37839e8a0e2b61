"""On-disk formats: potential dumps, grid problems, result CSVs and the run log."""

from __future__ import annotations

import csv
import io as _io
import json
import os
import time
from pathlib import Path

import numpy as np

from .errors import DomainError
from .lattice import Box, LatticeFunction, lattice_nodes, trapezoid_weights

__all__ = [
    "POTENTIAL_HEADER",
    "STUDY_COLUMNS",
    "FDD_COLUMNS",
    "dump_potential",
    "load_potential",
    "format_potential",
    "parse_potential",
    "write_grid_problem",
    "read_grid_problem",
    "write_rows",
    "RunLog",
]

POTENTIAL_HEADER = "SBFR-POTENTIAL v1"
STUDY_COLUMNS = ("N", "seed", "iterations", "dH_to_oracle", "sup_error", "kappa_hat",
                 "bandwidth", "runtime_ms")
FDD_COLUMNS = ("R", "seed", "epsilon", "t_star", "estimate", "std_error", "c0T", "flag")


def _num(x):
    return "%.17g" % x


def format_potential(f: LatticeFunction) -> str:
    lines = [POTENTIAL_HEADER, f"dim {f.dim}"]
    for j in range(f.dim):
        lines.append(f"box {_num(f.box.lo[j])} {_num(f.box.hi[j])} {f.shape[j]}")
    lines.extend(_num(v) for v in f.values.ravel(order="C"))
    return "\n".join(lines) + "\n"


def parse_potential(text: str) -> LatticeFunction:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != POTENTIAL_HEADER:
        raise DomainError("not a potential dump (bad header)")
    try:
        key, dim = lines[1].split()
        if key != "dim":
            raise ValueError
        dim = int(dim)
        lo, hi, shape = [], [], []
        for j in range(dim):
            key, a, b, n = lines[2 + j].split()
            if key != "box":
                raise ValueError
            lo.append(float(a))
            hi.append(float(b))
            shape.append(int(n))
        values = np.array([float(v) for v in lines[2 + dim:]])
    except (ValueError, IndexError) as exc:
        raise DomainError(f"malformed potential dump: {exc}") from None
    if values.size != int(np.prod(shape)):
        raise DomainError(f"potential dump has {values.size} values, expected {int(np.prod(shape))}")
    return LatticeFunction(Box(lo, hi), values.reshape(shape))


def dump_potential(f, path):
    Path(path).write_text(format_potential(f))


def load_potential(path):
    return parse_potential(Path(path).read_text())


def write_grid_problem(p, path):
    """Long-format CSV ``section,i,j,value`` holding every array of a grid problem."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("section", "i", "j", "value"))
    for name in ("x", "z"):
        arr = getattr(p, name)
        for i in range(arr.shape[0]):
            for j in range(arr.shape[1]):
                w.writerow((name, i, j, _num(arr[i, j])))
    for name in ("w0", "wT", "rho0", "rhoT"):
        for i, v in enumerate(getattr(p, name)):
            w.writerow((name, i, 0, _num(v)))
    for i in range(p.q.shape[0]):
        for j in range(p.q.shape[1]):
            w.writerow(("q", i, j, _num(p.q[i, j])))
    Path(path).write_text(buf.getvalue())


def read_grid_problem(path):
    from .oracles import GridProblem

    cells = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            cells.setdefault(row["section"], []).append(
                (int(row["i"]), int(row["j"]), float(row["value"])))

    def build(name, ndim):
        entries = cells.get(name)
        if not entries:
            raise DomainError(f"grid problem file lacks section {name!r}")
        ni = max(e[0] for e in entries) + 1
        nj = max(e[1] for e in entries) + 1
        arr = np.empty((ni, nj))
        for i, j, v in entries:
            arr[i, j] = v
        return arr[:, 0] if ndim == 1 else arr

    return GridProblem(build("x", 2), build("z", 2), build("w0", 1), build("wT", 1),
                       build("rho0", 1), build("rhoT", 1), build("q", 2))


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _num(v)
    return "" if v is None else str(v)


def write_rows(path, columns, rows):
    """CSV with fixed column order and 17-digit floats, so reruns compare bytewise."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row[c]) for c in columns])
    Path(path).write_text(buf.getvalue())


def lattice_grid_problem(model, rho0, rhoT, box0, boxT, shape):
    """Convenience used by the CLI: grid problem on matching trapezoid lattices."""
    from .oracles import GridProblem, kernel_matrix

    x = lattice_nodes(box0, shape)
    z = lattice_nodes(boxT, shape)
    return GridProblem(x, z, trapezoid_weights(box0, shape).ravel(),
                       trapezoid_weights(boxT, shape).ravel(), rho0(x), rhoT(z),
                       kernel_matrix(model, x, z), box0, boxT, shape, shape)


class RunLog:
    """Append-only JSON-lines log; one object per event with a wall-clock stamp."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._t0 = time.perf_counter()

    def event(self, name, **fields):
        rec = {"event": name, "time": time.time(),
               "elapsed_ms": round(1000 * (time.perf_counter() - self._t0), 3)}
        rec.update(fields)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(rec, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, os.PathLike):
        return os.fspath(o)
    return str(o)
