"""Seed derivation helpers.

Every stochastic component in the pipeline draws from a generator seeded by
hashing a base seed together with a purpose tag, so independent components
never share a stream and a single experiment seed reproduces everything.
"""

import hashlib

import numpy as np
import torch


def derive_seed(*parts) -> int:
    """Stable 63-bit seed derived from the given parts (ints, floats, strings)."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF


def np_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def torch_gen(*parts) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(*parts))
    return gen
