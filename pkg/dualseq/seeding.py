"""
Named random streams derived from a single run seed
"""

import zlib

import numpy as np


def named_stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """
    Independent generator for one purpose of a run

    The stream depends only on (seed, name, extra) so it is identical across
    processes and schedules.

    Args:
        seed: Run seed (unsigned 64-bit)
        name: Purpose, e.g. "generation", "init", "shuffle", "dropout"
        extra: Further integers such as a fold or patient index

    Returns:
        A seeded numpy Generator
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    key = [int(seed), zlib.crc32(name.encode("utf-8")), *(int(e) for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(key))
