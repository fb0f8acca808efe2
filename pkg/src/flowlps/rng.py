"""Hierarchical random streams.

Every source of randomness is a ``numpy.random.Generator`` derived from a
master seed, a role tag and an instance index, so that e.g. the measurement
noise of instance 7 never depends on how many draws the sampler made.
"""

import zlib

import numpy as np


def _role_key(role):
    return zlib.crc32(role.encode("utf-8"))


def derive(master_seed, role, index=0):
    """Return an independent generator for ``(master_seed, role, index)``."""
    seq = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=(_role_key(role), int(index))
    )
    return np.random.Generator(np.random.PCG64(seq))


def derive_seed(master_seed, role, index=0):
    """Derive a 63-bit integer seed, suitable for recording in a CSV row."""
    seq = np.random.SeedSequence(
        entropy=int(master_seed), spawn_key=(_role_key(role), int(index))
    )
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
