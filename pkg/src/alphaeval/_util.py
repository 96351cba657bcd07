from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *keys: object) -> int:
    """Split ``root`` into an independent 64-bit seed for the purpose named by ``keys``.

    Keys are hashed with SHA-256 rather than ``hash()`` so that the result is
    stable across interpreter runs.
    """
    words = [int(root) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        digest = hashlib.sha256(repr(key).encode("utf-8")).digest()
        words.append(int.from_bytes(digest[:8], "little"))
    state = np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)
    return int(state[0])


def as_matrix(x) -> np.ndarray:
    """Return the 2-D float array behind a SignalMatrix / ReturnMatrix / array."""
    values = getattr(x, "values", x)
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected a T x N matrix, got shape {arr.shape}")
    return arr


def freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr
