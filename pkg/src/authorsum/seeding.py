"""Seed derivation so independent streams (corpus, init, dropout, shuffles) never share state."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(parent: int, label: str) -> int:
    """Child seed = first 8 bytes of BLAKE2b(parent || label), as an unsigned 64-bit int."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(parent).to_bytes(8, "little", signed=False))
    h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, *labels: str) -> np.random.Generator:
    for label in labels:
        seed = derive_seed(seed, label)
    return np.random.Generator(np.random.PCG64(seed))
