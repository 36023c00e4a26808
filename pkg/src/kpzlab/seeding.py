"""Deterministic stream derivation for all randomness in the laboratory.

Every random draw flows through a Philox counter-based generator whose key
is derived by hashing (master seed, stage id, replica index).  Replica
streams are therefore independent of scheduling and worker count.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_key(master_seed: int, stage: str, replica: int = 0) -> int:
    """128-bit Philox key from (master seed, stage id, replica index)."""
    raw = f"{master_seed}:{stage}:{replica}".encode()
    return int.from_bytes(hashlib.blake2b(raw, digest_size=16).digest(), "little")


def rng_for(master_seed: int, stage: str, replica: int = 0) -> np.random.Generator:
    """Generator for one (stage, replica) stream."""
    return np.random.Generator(np.random.Philox(key=derive_key(master_seed, stage, replica)))
