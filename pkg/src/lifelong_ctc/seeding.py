"""Named random substreams off a single root seed.

Every source of randomness in the library (data generation, parameter
init, batch order, memory selection, ...) pulls its generator from
``substream`` so that one component can be varied without perturbing the
draws seen by any other.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"substream keys must be int or str, got {type(key).__name__}")


def substream(root_seed: int, *keys) -> np.random.Generator:
    """Generator for the stream identified by (root_seed, *keys)."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def substream_seed(root_seed: int, *keys) -> int:
    """A derived integer seed, for handing to components that reseed themselves."""
    entropy = [int(root_seed) & 0xFFFFFFFFFFFFFFFF] + [_key_to_int(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])
