"""Reproducible random streams.

All randomness flows through numpy's PCG64 bit generator keyed by a
``SeedSequence`` built from the master seed plus integer or string tags, so a
stream depends only on ``(seed, tags)`` and never on call order elsewhere.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_value(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise ValueError(f"seed tags must be non-negative, got {tag}")
        return int(tag)
    return zlib.crc32(str(tag).encode("utf-8"))


def make_rng(seed: int, *tags) -> np.random.Generator:
    """Independent generator for ``seed`` and the stream labels ``tags``."""
    entropy = [_tag_value(seed)] + [_tag_value(t) for t in tags]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *tags) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``tags``."""
    return int(make_rng(seed, "derive", *tags).integers(0, 2**63 - 1))


def as_rng(rng_or_seed) -> np.random.Generator:
    if isinstance(rng_or_seed, np.random.Generator):
        return rng_or_seed
    return make_rng(int(rng_or_seed))
