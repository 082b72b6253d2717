"""Deterministic random streams and the worker pool.

Every random quantity is drawn from a generator keyed by ``(seed, stream,
...counters)`` through ``numpy.random.SeedSequence`` spawn keys, so the value
drawn for a given replicate never depends on how work is split across threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 4096

STREAM_WILD = 1
STREAM_PAIRS = 2
STREAM_SVBOOT = 3
STREAM_MC = 4
STREAM_PLACEBO = 5

WEBB6 = np.array([-np.sqrt(1.5), -1.0, -np.sqrt(0.5), np.sqrt(0.5), 1.0, np.sqrt(1.5)])


def generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key)))


def chunk_bounds(B: int, chunk: int = CHUNK) -> list[tuple[int, int, int]]:
    """``(chunk_index, start, stop)`` covering ``0..B``."""
    return [(c, s, min(s + chunk, B)) for c, s in enumerate(range(0, B, chunk))]


def weight_rows(dist: str, G: int, seed: int, stream: int, chunk: int, n: int,
                extra: tuple = ()) -> np.ndarray:
    """Auxiliary weights for ``n`` consecutive replicates of one chunk."""
    rng = generator(seed, stream, *extra, chunk)
    if dist == "rademacher":
        return rng.integers(0, 2, size=(n, G)).astype(np.float64) * 2.0 - 1.0
    if dist == "webb6":
        return WEBB6[rng.integers(0, 6, size=(n, G))]
    raise ValueError(f"unknown weight distribution {dist!r}")


def draw_weights(dist: str, G: int, replicate: int, seed: int, stream: int = STREAM_WILD) -> np.ndarray:
    """Weights for a single replicate; identical to the row used in batch runs."""
    c, r = divmod(int(replicate), CHUNK)
    return weight_rows(dist, G, seed, stream, c, r + 1)[r]


def rademacher_enumeration(G: int, start: int, stop: int) -> np.ndarray:
    """Rows ``start..stop`` of the full 2**G sign enumeration.

    Row ``b`` has ``v_g = -1`` exactly when bit ``g`` of ``b`` is set, so row 0
    is the all-plus vector and row ``2**G - 1`` the all-minus one.
    """
    b = np.arange(start, stop, dtype=np.int64)[:, None]
    bits = (b >> np.arange(G, dtype=np.int64)[None, :]) & 1
    return 1.0 - 2.0 * bits.astype(np.float64)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("CLUSTERKIT_THREADS", "1")))
    except ValueError:
        return 1


def pmap(fn, items, threads: int | None = None) -> list:
    """Ordered map over ``items``; results never depend on ``threads``."""
    items = list(items)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
