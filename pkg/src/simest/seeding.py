"""Counter-based random streams.

Every random quantity in a run is drawn from a generator derived from one
master seed plus an integer path (role, trial index, user index, ...), so
Monte-Carlo trials are order independent: any execution order or worker
count reproduces the same draws bit for bit.
"""

import numpy as np

# Role tags used as the first component of a stream path.
ROLE_CHANNEL = 0      # per-trial NLoS fading draws
ROLE_NOISE = 1        # per-trial pilot noise
ROLE_PLACEMENT = 2    # user distances
ROLE_AOA = 3          # user angles of arrival
ROLE_CODEBOOK = 4     # random phase codebooks
ROLE_INIT = 5         # randomized optimizer restarts


def spawn_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Return a generator keyed by ``(master_seed, path)``.

    Identical arguments always give an identical stream; distinct paths give
    statistically independent streams.
    """
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(path))
    return np.random.default_rng(seq)
