"""Deterministic random substreams and chunked parallel evaluation.

Every Monte Carlo estimator splits its sample paths into fixed-size chunks.
Chunk ``c`` of a stream tagged ``tag`` draws from
``SeedSequence(seed, spawn_key=(tag, c))``, so results depend only on the
seed and never on how many workers process the chunks.
"""
from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 256
_workers = 1


def set_workers(k: int | None) -> None:
    """Cap on worker threads; has no effect on results."""
    global _workers
    _workers = max(1, int(k or 1))


def get_workers() -> int:
    return _workers


def stream_tag(name: str) -> int:
    return zlib.crc32(name.encode())


def chunk_rng(seed: int, tag: str, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(stream_tag(tag), int(chunk)))
    return np.random.default_rng(ss)


def chunk_sizes(samples: int, chunk: int = CHUNK) -> list[int]:
    full, rest = divmod(int(samples), chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(fn, samples: int, seed: int, tag: str, chunk: int = CHUNK) -> list:
    """Run ``fn(rng, size, index)`` over all chunks; results in chunk order."""
    sizes = chunk_sizes(samples, chunk)
    jobs = [(chunk_rng(seed, tag, i), s, i) for i, s in enumerate(sizes)]
    workers = min(_workers, len(jobs), os.cpu_count() or 1)
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


def draw_paths(rng: np.random.Generator, size: int, n: int, p: np.ndarray, m: int):
    """Uniform start points and letter sequences by inverse CDF.

    Letters come from a ``(n, size)`` block of uniforms so that the path
    prefixes agree across orbit lengths and nearby weight vectors share most
    letters.
    """
    t0 = rng.random((size, m))
    u = rng.random((n, size))
    cdf = np.cumsum(p)
    letters = np.minimum(np.searchsorted(cdf, u, side="right"), len(p) - 1)
    return t0, letters


def mean_stderr(x: np.ndarray, axis: int = 0):
    """Sample mean and standard error (real or complex) along ``axis``."""
    x = np.asarray(x)
    n = x.shape[axis]
    mu = x.mean(axis=axis)
    if n < 2:
        return mu, np.zeros(np.shape(mu))
    dev = x - np.expand_dims(mu, axis)
    var = np.sum(np.abs(dev) ** 2, axis=axis) / (n - 1)
    return mu, np.sqrt(var / n)
