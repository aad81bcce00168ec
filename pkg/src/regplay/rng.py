"""Deterministic derivation of named RNG substreams from one run seed.

Every piece of randomness in the package flows from a single 64-bit seed
through `substream(seed, *path)`.  The path is a mix of strings (purpose
labels) and integers (iteration / rollout / member indices); equal paths
give bitwise-equal generators, disjoint paths give independent ones.
No global RNG state is ever touched.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        digest = hashlib.blake2s(part.encode("utf-8"), digest_size=4).digest()
        return int.from_bytes(digest, "little")
    value = int(part)
    if value < 0:
        raise ValueError("stream path integers must be non-negative")
    return value


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Return a Generator for the substream named by `path` under `seed`."""
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    return np.random.default_rng(ss)


def child_seed(seed: int, *path: int | str) -> int:
    """A derived 64-bit seed usable as the root of an independent run."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(p) for p in path))
    state = ss.generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)
