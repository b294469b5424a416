"""Per-component seed derivation from one master seed.

Every random decision in the pipeline draws from a Generator seeded by a
stable hash of (master seed, component name), so components stay decoupled:
adding draws to one never shifts another, and runs are bit-reproducible.
"""

import hashlib

import numpy as np


def derive_seed(master_seed: int, component: str) -> int:
    digest = hashlib.sha256(f"{int(master_seed)}:{component}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(master_seed: int, component: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master_seed, component)))
