"""Deterministic derivation of independent random streams from one seed."""

import zlib

import numpy as np


def _tag_key(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Return a generator keyed by ``seed`` and any number of tags.

    Distinct tag tuples give statistically independent streams, so adding a
    consumer never shifts the draws of another one.
    """
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_tag_key(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def child_seed(seed: int, *tags) -> int:
    return int(make_rng(seed, *tags).integers(0, 2**63 - 1))
