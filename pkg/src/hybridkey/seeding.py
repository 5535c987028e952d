"""Deterministic randomness plumbing.

Every random draw in the package is traced back to one integer seed plus a
label path, so that independent consumers (Alice, Bob, the simulator, a
replenisher batch) get disjoint, reproducible streams.
"""

from __future__ import annotations

import hashlib
import os
import random

import numpy as np


def derive_seed(seed: int, *labels: object) -> int:
    """Hash ``seed`` and ``labels`` into a 64-bit child seed."""
    h = hashlib.sha256(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:8], "big")


def py_rng(seed: int, *labels: object) -> random.Random:
    # random.Random is used for big-integer work (getrandbits / randrange)
    return random.Random(derive_seed(seed, *labels))


def np_rng(seed: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))


def fresh_seed() -> int:
    """Seed for unseeded runs; callers are expected to print it."""
    return int.from_bytes(os.urandom(4), "big")
