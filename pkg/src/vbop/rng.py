"""Deterministic random-number plumbing.

Every stochastic operation in the toolkit is keyed by an integer seed plus a
tuple of small integer lane indices (row number, epoch, draw index, ...).
Generators are built from a counter-based Philox stream, so sampling a given
lane is independent of how many other lanes were sampled and in what order.
That is what makes parallel generation bit-reproducible.
"""

import hashlib

import numpy as np

_U64 = (1 << 64) - 1


def lane_rng(seed: int, *lane: int) -> np.random.Generator:
    """Generator for one (seed, lane...) key; identical keys give identical streams."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & _U64, spawn_key=tuple(int(v) & _U64 for v in lane)
    )
    return np.random.Generator(np.random.Philox(ss))


def subseed(seed: int, *tags) -> int:
    """Derive a purpose-specific 63-bit seed from a global seed and string tags.

    Stable across platforms and runs (sha256 based), so orchestration code can
    hand distinct, reproducible seeds to each pipeline stage.
    """
    text = "/".join(str(t) for t in tags) + "#" + str(int(seed) & _U64)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1
