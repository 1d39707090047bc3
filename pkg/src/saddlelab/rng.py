"""Seeded, splittable random streams.

Every stream is a Philox counter-based generator keyed by a root seed and a
tuple stream id, e.g. ``(replica,)`` or ``(replica, agent)``. Streams with
different ids are statistically independent, and a given ``(root, id)`` pair
yields the same sequence on every platform and in every schedule.
"""
from __future__ import annotations

import numpy as np

__all__ = ["stream", "replica_streams"]


def stream(seed_root: int, *stream_id: int) -> np.random.Generator:
    """Return the Philox generator for ``(seed_root, stream_id)``."""
    if seed_root < 0 or any(s < 0 for s in stream_id):
        raise ValueError("seed and stream ids must be non-negative")
    seq = np.random.SeedSequence(entropy=int(seed_root), spawn_key=tuple(int(s) for s in stream_id))
    return np.random.Generator(np.random.Philox(seq))


def replica_streams(seed_root: int, replicas: int) -> list[np.random.Generator]:
    return [stream(seed_root, r) for r in range(replicas)]
