"""Counter-based seed derivation: master -> split -> scene -> waypoint -> candidate.

Every random stream in an experiment is keyed by its position in this tree,
so re-running one scene or one waypoint reproduces exactly the same draws.
"""
from enum import IntEnum

import numpy as np

SPLITS = {"train": 0, "test": 1}


class Stream(IntEnum):
    SCENE = 0
    MAPPING = 1
    WAYPOINTS = 2
    CANDIDATES = 3
    ORACLE = 4
    RANDOM_POLICY = 5
    TRAINING = 6
    BALANCE = 7


def seed_sequence(master, split=0, scene=-1, waypoint=-1, candidate=-1, stream=Stream.SCENE):
    if master < 0:
        raise ValueError("master seed must be non-negative")
    split = SPLITS[split] if isinstance(split, str) else int(split)
    # -1 means "not at this level"; shift so all entries are non-negative
    key = [int(master), split, int(scene) + 1, int(waypoint) + 1, int(candidate) + 1, int(stream)]
    return np.random.SeedSequence(key)


def derive_seed(master, split=0, scene=-1, waypoint=-1, candidate=-1, stream=Stream.SCENE) -> int:
    """A 32-bit integer seed for the given node of the seed tree."""
    return int(seed_sequence(master, split, scene, waypoint, candidate, stream).generate_state(1)[0])


def derive_rng(master, split=0, scene=-1, waypoint=-1, candidate=-1, stream=Stream.SCENE):
    return np.random.default_rng(seed_sequence(master, split, scene, waypoint, candidate, stream))
