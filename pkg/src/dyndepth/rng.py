"""Deterministic random streams backed by the Philox counter-based generator.

Every source of randomness in the package (parameter init, data
generation, epoch shuffling, head re-initialization) pulls from its own
named stream so that adding draws to one stage can never shift another.
"""

from __future__ import annotations

import numpy as np

# Fixed stream ids; append only, never renumber.
STREAM_MODEL_INIT = 0
STREAM_DATA = 1
STREAM_SHUFFLE_PHASE1 = 2
STREAM_SHUFFLE_PHASE2 = 3
STREAM_HEAD_REINIT = 4
STREAM_BASELINE_HEADS = 5
STREAM_AUDIT = 6


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for (seed, stream); same pair always replays identically.

    Philox takes a 128-bit key, so the stream id occupies the high word and
    can never collide with any 64-bit seed.
    """
    return np.random.Generator(np.random.Philox(key=(int(stream) << 64) | (int(seed) & (2**64 - 1))))
