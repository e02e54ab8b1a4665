"""Stable random-stream keying.

Every random draw in the package comes from a numpy Generator seeded by a
blake2b hash of (purpose, seed, coordinates). Streams are therefore
independent of each other, of iteration order, and of process history,
which is what makes checkpoint resume bit-exact: a restarted run re-derives
the same stream for step N without replaying steps 0..N-1.

Python's builtin hash() is salted per process and never used here.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stable_seed(*parts) -> int:
    """Collapse ints/strings into a 64-bit seed, stable across runs and platforms."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, (int, np.integer)):
            h.update(b"i")
            h.update(int(part).to_bytes(16, "little", signed=True))
        elif isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s")
            h.update(len(raw).to_bytes(4, "little"))
            h.update(raw)
        else:
            raise TypeError(f"unhashable stream key part: {part!r}")
    return int.from_bytes(h.digest(), "little")


def generator(*parts) -> np.random.Generator:
    """A fresh Generator for the stream named by `parts`."""
    return np.random.default_rng(stable_seed(*parts))
