"""Seeded random streams.

Every unit of work (an initial condition, an ensemble member, a perturbation)
gets its own generator keyed by ``(master_seed, experiment_id, unit_index)``.
Results then do not depend on how units are scheduled or batched.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(experiment_id: str) -> int:
    return zlib.crc32(experiment_id.encode("utf-8"))


def stream(master_seed: int, experiment_id: str, unit_index: int = 0) -> np.random.Generator:
    """PCG64 generator for one unit of work."""
    if master_seed < 0 or unit_index < 0:
        raise ValueError("seeds and unit indices must be nonnegative")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(_key(experiment_id), int(unit_index)))
    return np.random.Generator(np.random.PCG64(seq))


def streams(master_seed: int, experiment_id: str, count: int, start: int = 0) -> list[np.random.Generator]:
    return [stream(master_seed, experiment_id, start + i) for i in range(count)]
