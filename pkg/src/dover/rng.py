"""Keyed, splittable seeding.

Every random decision in the package is drawn from a generator derived from
a root seed plus a tuple of keys, so that e.g. the crop offset of grid cell
(u, v) in clip 2 of video "abc" does not depend on the order in which other
cells were sampled.
"""
from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

SeedLike = Union[None, int, np.random.Generator]


def key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"negative key {key}")
        return int(key)
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def keyed_rng(root: int, *keys) -> np.random.Generator:
    """Generator determined by ``root`` and ``keys`` only."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(key_to_int(k) for k in keys))
    return np.random.default_rng(ss)


def derive_seed(root: int, *keys) -> int:
    """A 63-bit integer seed derived from ``root`` and ``keys``."""
    ss = np.random.SeedSequence(entropy=int(root), spawn_key=tuple(key_to_int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0]) >> 1


def root_seed(rng: SeedLike, default: int) -> int:
    """Resolve a seed-like argument into an integer root.

    A ``Generator`` is advanced by one draw, so repeated calls with the same
    generator yield fresh roots.
    """
    if rng is None:
        return int(default)
    if isinstance(rng, np.random.Generator):
        return int(rng.integers(0, 2**63 - 1))
    return int(rng)


def as_generator(rng: SeedLike, default: int) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(default if rng is None else int(rng))
