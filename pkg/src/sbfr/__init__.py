"""Schrodinger bridge potentials from forward and reverse diffusion samples.

Submodules load lazily on attribute access; ``sbfr.solver``,
``sbfr.bridge``, ``sbfr.oracles`` and ``sbfr.cli`` are the main entry points.
"""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("bridge", "cli", "config", "densities", "errors", "experiments", "io", "kernels",
               "lattice", "oracles", "rng", "sde", "solver")


def __getattr__(name):
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module 'sbfr' has no attribute {name!r}")
