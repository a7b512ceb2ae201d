"""Counter-based seed splitting.

Every random stream is keyed by the master seed plus a path of labels, e.g.
``derive_seed(master, "worker", 3)`` or ``derive_seed(master, "track", 0)``.
The key is hashed with BLAKE2b, so streams are independent of creation order
and of how many workers run.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master: int, *keys) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for k in keys:
        h.update(b"/")
        h.update(str(k).encode())
    return int.from_bytes(h.digest(), "little") & ((1 << 63) - 1)


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
