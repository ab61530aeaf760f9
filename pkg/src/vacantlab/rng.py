"""Seed derivation and random-walk generators.

Every stochastic computation in this package draws from a numpy Philox
counter-based generator keyed by a 64-bit stream seed.  Stream seeds are
derived from a master seed with SplitMix64: replica ``k`` of a run seeded
with ``master`` uses the ``(k+1)``-th output of a SplitMix64 sequence whose
initial state is ``master``.  Both algorithms are publicly specified, so a
(master_seed, replica_index) pair pins the replica's trajectory bit for bit
on any platform.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance one SplitMix64 step; returns ``(new_state, output)``."""
    state = (state + _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    z = z ^ (z >> 31)
    return state, z


def stream_seed(master_seed: int, replica_index: int) -> int:
    """Stream seed for one replica: the ``(replica_index+1)``-th SplitMix64 output.

    SplitMix64's state after k steps is ``master + k*gamma (mod 2**64)``, so the
    k-th output is available in O(1) without iterating.
    """
    if replica_index < 0:
        raise ValueError("replica_index must be >= 0")
    state = (master_seed + (replica_index + 1) * _SPLITMIX_GAMMA) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def make_generator(seed: int) -> np.random.Generator:
    """Philox generator keyed directly by a 64-bit seed (no entropy pooling)."""
    if not 0 <= seed <= _MASK64:
        raise ValueError("seed must fit in 64 bits")
    return np.random.Generator(np.random.Philox(key=seed))
