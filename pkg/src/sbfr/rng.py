"""Counter-based random streams.

Every draw is a pure function of ``(seed, domain, index, slot)`` through
Philox4x32-10, so a path's noise depends only on its own index and never on
batch size, chunking, or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend

# Stream domains; forward and reverse noise must never share one.
FORWARD_START = 1
FORWARD_PATH = 2
REVERSE_START = 3
REVERSE_PATH = 4
POTENTIAL_SAMPLE = 5
AUX_FORWARD = 6
RESIDUAL_FORWARD = 7
RESIDUAL_REVERSE = 8
H_START = 9
H_PATH = 10
FR_FORWARD = 11
FR_REVERSE = 12
FDD_START0 = 13
FDD_STARTT = 14
AUX_REVERSE = 15


def derive_seed(master_seed, *words):
    """64-bit key derived from a master seed and extra integer words."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(w) for w in words))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class SeedStream:
    """A (key, domain) pair; draws are addressed by path index and slot."""

    seed: int
    domain: int

    @classmethod
    def from_master(cls, master_seed, domain, *words):
        return cls(derive_seed(master_seed, *words), domain)

    def normals(self, indices, slot, count):
        idx = np.ascontiguousarray(indices, dtype=np.int64)
        return _backend.kernels.philox_normals(self.seed, self.domain, idx, int(slot), int(count))

    def uniforms(self, indices, slot, count):
        idx = np.ascontiguousarray(indices, dtype=np.int64)
        return _backend.kernels.philox_uniforms(self.seed, self.domain, idx, int(slot), int(count))
