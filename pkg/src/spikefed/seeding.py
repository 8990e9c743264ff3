"""Counter-based seed derivation.

Every random draw in the package flows from one global seed through
``numpy.random.SeedSequence`` spawn keys of the form
(component, *counters), so results cannot depend on scheduling order.
"""

import numpy as np

# Component ids for spawn keys. Never renumber: round logs and checkpoints
# produced with one numbering would not be reproducible under another.
DATA = 0
SELECTION = 1
LOCAL_TRAIN = 2
ATTACK = 3
STRIP = 4
INIT = 5


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for (seed, component, counter...) without shared state."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(path)))


def derive_seed(seed: int, *path: int) -> int:
    """64-bit integer sub-seed for APIs that take a plain seed."""
    words = np.random.SeedSequence(seed, spawn_key=tuple(path)).generate_state(2)
    return int(words[0]) | (int(words[1]) << 32)
