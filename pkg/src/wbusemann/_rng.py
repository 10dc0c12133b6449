"""Counter-based random substreams.

Every stochastic draw in the package is addressed by a tuple of integers
(master seed, stream name, index, ...).  Two calls with the same address
see the same numbers regardless of call order or threading.
"""
import zlib

import numpy as np

_NAMES = {}


def _name_key(name):
    key = _NAMES.get(name)
    if key is None:
        key = _NAMES[name] = zlib.crc32(name.encode())
    return key


def substream(seed, name, *index):
    """Generator for the substream ``(seed, name, *index)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_name_key(name),) + tuple(int(i) for i in index))
    return np.random.Generator(np.random.PCG64(ss))
