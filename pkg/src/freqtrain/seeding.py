"""Deterministic generator derivation from (seed, tag/ordinal...) tuples."""

import hashlib

import numpy as np


def _entropy(parts):
    out = []
    for p in parts:
        if isinstance(p, str):
            digest = hashlib.sha256(p.encode()).digest()[:8]
            out.append(int.from_bytes(digest, "little"))
        else:
            out.append(int(p))
    return out


def derived_rng(*parts):
    """PCG64 generator keyed by the given ints/strings, order-sensitive."""
    return np.random.default_rng(np.random.SeedSequence(_entropy(parts)))


def stable_seed(*parts):
    """Process-independent 31-bit seed from ints/strings (hash() is not)."""
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:4], "little") % (2**31)
