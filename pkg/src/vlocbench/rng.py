"""Deterministic, platform-independent random streams.

Every stochastic component draws from a named Philox stream derived from
(seed, purpose, *key parts). Philox is counter-based, so streams with
different keys are statistically independent and reproducible regardless
of the order in which they are created or consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, purpose: str, *parts: int) -> np.random.Generator:
    """Return a generator for the stream named by (seed, purpose, parts)."""
    tag = f"{seed}:{purpose}:" + ":".join(str(p) for p in parts)
    digest = hashlib.sha256(tag.encode("ascii")).digest()
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, purpose: str, *parts: int) -> int:
    """Stable 63-bit integer seed for components that take a plain seed."""
    tag = f"{seed}:{purpose}:" + ":".join(str(p) for p in parts)
    digest = hashlib.sha256(tag.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
