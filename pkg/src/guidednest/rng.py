"""Named, independent random streams derived from one integer seed.

Each purpose (prior noise, initialization of one modality, sweeps of one
modality, fold-in of one document) draws from its own stream, so adding or
removing a modality never shifts the random numbers another modality sees.
"""
import numpy as np

ALPHA_NOISE = 1
INIT = 2
SWEEP = 3
FOLD_IN = 4
SYNTH = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
