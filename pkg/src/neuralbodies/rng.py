"""Named random streams split from a single 64-bit seed.

Each consumer asks for its own stream by name, so adding a consumer never
shifts the numbers another one sees.
"""

import zlib

import numpy as np


def stream(seed, name, *index):
    key = (zlib.crc32(name.encode()), *[int(i) for i in index])
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2 ** 64 - 1), spawn_key=key))
