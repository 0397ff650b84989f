"""Deterministic seed derivation.

All randomness in the package flows from a single master seed. Sub-streams
are derived by hashing the master seed together with a tuple of string/int
tags, so results are independent of execution order and safe to parallelise:
``derive_seed(master, "topology", 3)`` always names the same stream.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *tags: object) -> int:
    """Derive a 64-bit child seed from ``master`` and a tag tuple.

    The derivation is SHA-256 over the repr of the tag tuple, which is
    stable across processes and platforms.
    """
    label = repr((int(master),) + tuple(tags)).encode("utf-8")
    digest = hashlib.sha256(label).digest()
    return int.from_bytes(digest[:8], "big")


def rng_for(master: int, *tags: object) -> np.random.Generator:
    """A fresh PCG64 generator for the derived stream."""
    return np.random.default_rng(derive_seed(master, *tags))
