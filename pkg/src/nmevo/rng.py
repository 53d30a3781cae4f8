"""Counter-based random streams derived from a single master seed.

Every source of randomness in a run is a named stream: a Philox generator
keyed by a hash of (master_seed, *path). Streams never share state, so any
piece of work can be recomputed in isolation (or on any worker) and produce
bit-identical draws. This is what makes thread-count invariance and
checkpoint resume cheap: there is no global RNG cursor to save.
"""

from __future__ import annotations

import hashlib

import numpy as np

PathPart = int | str


def stream_key(master_seed: int, *path: PathPart) -> int:
    """128-bit Philox key for a named stream."""
    parts = [str(int(master_seed))]
    for p in path:
        if isinstance(p, bool) or not isinstance(p, (int, str)):
            raise TypeError(f"stream path parts must be int or str, got {p!r}")
        parts.append(f"{'i' if isinstance(p, int) else 's'}:{p}")
    digest = hashlib.sha256("/".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def stream(master_seed: int, *path: PathPart) -> np.random.Generator:
    """Independent generator for the stream named by ``path``."""
    return np.random.Generator(np.random.Philox(key=stream_key(master_seed, *path)))
