"""Seed streams keyed by (master seed, task tag).

Streams do not depend on evaluation order, so work can be split across
workers without changing results.
"""

from __future__ import annotations

import zlib

import numpy as np


def tag_key(tag) -> tuple[int, ...]:
    if isinstance(tag, int):
        return (tag,)
    if isinstance(tag, tuple) and all(isinstance(t, int) for t in tag):
        return tag
    return (zlib.crc32(repr(tag).encode()),)


def stream(seed: int, *tag) -> np.random.Generator:
    key: tuple[int, ...] = ()
    for t in tag:
        key += tag_key(t)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=key))


def derive_seed(seed: int, *tag) -> int:
    """A 31-bit child seed for APIs that take a plain integer."""
    return int(stream(seed, *tag).integers(2**31))
