"""Deterministic derived RNG streams.

Every randomized stage draws from a stream derived from the master seed plus
string keys (sentence id, stage name, round index, ...) so work items can run
in any order, or concurrently, without changing results.
"""
from __future__ import annotations

import hashlib
import random


def derive_seed(seed: int, *keys: object) -> int:
    """Map (seed, keys...) to a stable 64-bit stream seed."""
    material = ":".join([str(seed), *(str(k) for k in keys)]).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(seed: int, *keys: object) -> random.Random:
    """Independent RNG stream for one work item."""
    return random.Random(derive_seed(seed, *keys))
