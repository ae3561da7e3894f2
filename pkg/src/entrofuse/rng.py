"""Named, seedable RNG streams.

Every source of randomness in a run is drawn from a stream identified by
(master seed, name). Streams are independent, so e.g. switching the masking
strategy leaves the data-shuffling order untouched across ablations.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream"]


def _name_words(name: str) -> list[int]:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def stream(seed: int, name: str) -> np.random.Generator:
    """Deterministic generator for the given (seed, name) pair."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *_name_words(name)])
    return np.random.default_rng(ss)
