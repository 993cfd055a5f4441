"""Keyed counter-based random streams.

Every random draw in a run is addressed by a key such as
``(seed, episode, strategy, draw)``.  The key is hashed by
:class:`numpy.random.SeedSequence` into a Philox key, so a stream depends only
on its address and never on iteration order or worker count.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

STRATEGY_IDS = {"viewpoint": 1, "color": 2, "background": 3, "object": 4, "mix": 5}


def key_rng(seed: int | Sequence[int], *path: int | str) -> np.random.Generator:
    if isinstance(seed, (int, np.integer)):
        entropy, spawn = int(seed), []
    else:
        seed = list(seed)
        entropy, spawn = int(seed[0]), [int(s) for s in seed[1:]]
    for p in path:
        spawn.append(STRATEGY_IDS[p] if isinstance(p, str) else int(p))
    ss = np.random.SeedSequence(entropy, spawn_key=tuple(spawn))
    return np.random.Generator(np.random.Philox(ss))
