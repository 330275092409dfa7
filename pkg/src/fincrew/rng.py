"""Named random substreams.

Every stochastic operation draws from ``substream(seed, name, *index)``.  The
generator depends only on the global seed, the stream name and the index
tuple, so operations can run in any order without perturbing each other.
"""

import zlib

import numpy as np

STREAMS = ("split", "smote", "downsample", "forest", "permimp", "perturb", "folds", "synth")


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, *index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(_stream_key(name), *map(int, index)))
    return np.random.Generator(np.random.PCG64(seq))
