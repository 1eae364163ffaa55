"""Deterministic seed derivation for independent RNG streams."""

import hashlib

import numpy as np


def derive_seed(master_seed: int, *tags) -> int:
    """Hash a master seed plus string/int tags into a stable 63-bit child seed.

    Children for distinct tags are statistically independent, and the mapping
    is stable across platforms and Python versions.
    """
    key = ":".join([str(int(master_seed))] + [str(t) for t in tags])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF


def np_rng(master_seed: int, *tags) -> np.random.Generator:
    """Generator seeded from `derive_seed(master_seed, *tags)`."""
    return np.random.default_rng(derive_seed(master_seed, *tags))
