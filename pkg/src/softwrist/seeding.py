"""Deterministic RNG streams derived from one master seed.

A stream is identified by a text label plus optional integer indices. The label is
hashed with SHA-256 so the split does not depend on Python's randomized ``hash``.
"""

from __future__ import annotations

import hashlib

import numpy as np


def label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


def seed_sequence(seed: int, label: str, *indices: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(label_key(label), *(int(i) for i in indices)))


def stream(seed: int, label: str, *indices: int) -> np.random.Generator:
    """Generator for (seed, label, indices); independent of every other label/index."""
    return np.random.default_rng(seed_sequence(seed, label, *indices))


def derived_seed(seed: int, label: str, *indices: int) -> int:
    return int(seed_sequence(seed, label, *indices).generate_state(1, np.uint64)[0] >> np.uint64(1))
