"""Labeled random-stream derivation.

Every stage and shard derives its own stream from (master seed, label), so
adding or reordering stages never perturbs another stage's randomness and
worker scheduling cannot change results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, label: str) -> int:
    """Stable 63-bit seed for a (master seed, label) pair."""
    digest = hashlib.blake2b(f"{master_seed}:{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def derive_rng(master_seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, label))
