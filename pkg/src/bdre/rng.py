"""Counter-based random streams.

Every stochastic routine takes an integer seed and derives independent
Philox streams keyed by (seed, *path). Replicas are processed in blocks of
fixed size; each block owns one stream keyed by its index, so results do
not depend on how blocks are distributed over workers.
"""

from dataclasses import dataclass

import numpy as np

# Fixed replica-block size: the work partition (and therefore every random
# draw) is a function of (seed, n) only, never of the worker count.
BLOCK = 4096


@dataclass(frozen=True)
class SeedRecord:
    """Provenance of the stream(s) that produced a sampled object."""

    seed: int
    stream: tuple


def stream(seed: int, *path: int) -> np.random.Generator:
    """Independent generator keyed by (seed, *path), reproducible bit-for-bit."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


def replica_blocks(n: int):
    """Yield (block_index, start, count) covering range(n) in BLOCK-sized slabs."""
    start = 0
    idx = 0
    while start < n:
        count = min(BLOCK, n - start)
        yield idx, start, count
        start += count
        idx += 1


def num_workers() -> int:
    """Worker count for replica fan-out (BDRE_NUM_WORKERS, default 1)."""
    import os

    raw = os.environ.get("BDRE_NUM_WORKERS", "1")
    try:
        w = int(raw)
    except ValueError as exc:
        raise ValueError(f"BDRE_NUM_WORKERS must be an integer >= 1, got {raw!r}") from exc
    if w < 1:
        raise ValueError(f"BDRE_NUM_WORKERS must be >= 1, got {w}")
    return w
