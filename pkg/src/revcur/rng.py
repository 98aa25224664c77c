"""Counter-based random stream derivation.

A single run seed deterministically derives every random stream in an
experiment through (component id, worker id, ...) paths, so adding or
reordering consumers never perturbs unrelated streams.
"""
from __future__ import annotations

import numpy as np

# Component ids registered here so stream paths stay stable across versions.
INIT = 0
COLLECT = 1
CURRICULUM = 2
EVAL = 3
ORACLE = 4
SELFPLAY = 5
TESTSET = 6


def substream(run_seed: int, *path: int) -> np.random.Generator:
    """Return the generator for ``run_seed`` at the given derivation path."""
    ss = np.random.SeedSequence(run_seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.PCG64(ss))
