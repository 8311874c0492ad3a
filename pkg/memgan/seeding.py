"""
Deterministic random streams.

All randomness derives from a master seed. Component streams are split by
hashing (master_seed, label, index...) with SHA-256 so that parallel trials get
independent, reproducible streams on every platform. Python's built-in hash()
is salted per process and must not be used here.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_seed(*parts: object) -> int:
    """
    Return a stable 64-bit seed derived from arbitrary parts.

    Example:
        stable_seed(7, "generator", 3) -> same value on every run
    """
    payload = "|".join(str(part) for part in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def derive_rng(master_seed: int, *labels: object) -> np.random.Generator:
    """Return an independent PCG64 stream for (master_seed, *labels)."""
    return np.random.default_rng(stable_seed(master_seed, *labels))
