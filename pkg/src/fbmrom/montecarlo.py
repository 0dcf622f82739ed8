"""Deterministic chunked Monte-Carlo driver.

Samples are split into fixed-size chunks by index.  Chunk results are
combined strictly in chunk order, so a run gives bit-identical numbers for
any thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .fbm import sample_batch

CHUNK_SIZE = 100
TRAIN, EVAL = 0, 1


def chunk_bounds(n_samples, chunk_size=CHUNK_SIZE):
    return [(a, min(a + chunk_size, n_samples)) for a in range(0, n_samples, chunk_size)]


def map_chunks(fn, n_samples, threads=1, chunk_size=CHUNK_SIZE):
    """``[fn(start, stop) for each chunk]`` in chunk order."""
    bounds = chunk_bounds(n_samples, chunk_size)
    if threads is None or threads <= 1 or len(bounds) == 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=int(threads)) as ex:
        return list(ex.map(lambda ab: fn(*ab), bounds))


def ordered_sum(parts):
    it = iter(parts)
    total = next(it)
    if isinstance(total, np.ndarray):
        total = total.copy()
    for x in it:
        total = total + x
    return total


def noise_chunk(grid, H, q, seed, start, stop, stream=TRAIN):
    return sample_batch(grid, H, q, seed, start, stop, stream)
