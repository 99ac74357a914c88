"""Seeded random streams for reproducible simulation.

Every stream is derived from the master seed plus a spawn key, so a draw
depends only on (master_seed, purpose, index) and never on which worker
produced it or in what order.
"""
from __future__ import annotations

from enum import IntEnum

import numpy as np


class StreamKind(IntEnum):
    """Purpose tag mixed into the spawn key of each stream"""

    SITE = 0
    PROBE = 1
    ORDER = 2
    SITE_PROPERTIES = 3
    ASSEMBLY = 4


def stream(master_seed: int, kind: StreamKind, *index: int) -> np.random.Generator:
    """Independent generator for (master_seed, kind, *index)"""
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(kind), *map(int, index)))
    return np.random.Generator(np.random.PCG64(seq))
