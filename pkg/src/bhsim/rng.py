"""Named, reproducible random substreams derived from one master seed.

Every source of randomness in a run pulls from its own named stream
(e.g. ``"layout"``, ``"perception.2"``).  Streams are derived by hashing
``"{master_seed}:{name}"``, so adding or removing one consumer never
perturbs the draws seen by any other.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, name: str) -> int:
    """Deterministic 64-bit child seed for a named substream."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Independent generator for the named substream of ``master_seed``."""
    return np.random.default_rng(derive_seed(master_seed, name))
