"""Named, reproducible random substreams derived from a single master seed."""

import zlib

import numpy as np


def _key(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(str(name).encode("utf-8"))


def substream(seed: int, *names) -> np.random.Generator:
    """Independent generator for ``(seed, *names)``; never touches ambient entropy."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.Philox(ss))


def child_seed(seed: int, *names) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
