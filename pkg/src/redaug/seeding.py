"""Deterministic seed derivation.

Every stage of the pipeline derives its own integer seed from the run seed
and a string label, so that re-running a single stage in isolation produces
the same stream as running the whole pipeline.
"""

import hashlib

import numpy as np
import torch


def derive_seed(seed: int, *labels) -> int:
    """Map (seed, labels...) to a stable 32-bit seed."""
    h = hashlib.sha256()
    h.update(str(int(seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest()[:4], "little")


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))


def seed_torch(seed: int, *labels) -> int:
    """Seed torch's global generator for a stage; returns the derived seed."""
    s = derive_seed(seed, *labels)
    torch.manual_seed(s)
    return s
