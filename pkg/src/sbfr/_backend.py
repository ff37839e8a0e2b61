"""Selects the compiled kernels when importable, numpy otherwise.

Set ``SBFR_PURE_PYTHON=1`` to force the numpy path.
"""

import os

from . import _fallback

fallback = _fallback

if os.environ.get("SBFR_PURE_PYTHON") == "1":
    compiled = None
    kernels = _fallback
else:
    try:
        from . import _core as compiled
    except ImportError:  # extension not built
        compiled = None
        kernels = _fallback
    else:
        kernels = compiled

BACKEND = kernels.NAME


def available():
    """Kernel modules usable in this interpreter, compiled first."""
    return [m for m in (compiled, _fallback) if m is not None]


def thread_count():
    """Worker cap from ``SBFR_THREADS`` (default 1)."""
    raw = os.environ.get("SBFR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)
