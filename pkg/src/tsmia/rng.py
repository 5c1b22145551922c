"""Deterministic seed derivation.

Every random draw in the package flows from a single 64-bit experiment
seed through ``derive_seed(seed, tag, index)``. Stages get independent
streams keyed by a purpose tag, so e.g. changing the number of shadow
models never perturbs the target model's training data.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """Derive a child seed from (parent seed, purpose tag, index)."""
    payload = f"{seed}:{tag}:{index}".encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """A fresh PCG64 generator for one purpose, derived from the seed."""
    return np.random.default_rng(derive_seed(seed, tag, index))
