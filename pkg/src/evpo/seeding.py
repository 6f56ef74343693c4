"""Deterministic random-stream split.

Every stream in a run is ``numpy.random.default_rng([master, step, group,
trajectory, tag])``; the integer list goes through ``SeedSequence`` hashing,
so streams are independent and do not depend on execution order. Adding
parallelism therefore never changes results.
"""

import numpy as np

TAG_ENV = 0        # action sampling + slips of one trajectory
TAG_NOISE = 1      # critic read noise of one trajectory
TAG_TASKS = 2      # task-seed draw of one iteration (group = traj = 0)
TAG_INIT = 3       # agent initialization (step = group = traj = 0)
TAG_VALID = 4      # validation rollouts; master is VALID_MASTER, not the run seed

VALID_MASTER = 0x5EED
TRAIN_SEED_SPACE = 2 ** 31
VALID_SEED_BASE = 2 ** 31


def stream(master: int, step: int = 0, group: int = 0, traj: int = 0,
           tag: int = TAG_ENV) -> np.random.Generator:
    return np.random.default_rng([int(master), int(step), int(group), int(traj), int(tag)])
