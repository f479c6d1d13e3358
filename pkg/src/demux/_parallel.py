"""Thread-pool helper honoring the DEMUX_THREADS environment variable.

Work is split into contiguous index chunks and every result is written back
by position, so output is bit-identical for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

from .errors import DemuxError

T = TypeVar("T")

_ENV_VAR = "DEMUX_THREADS"


def thread_count() -> int:
    """Parallelism cap from the environment; defaults to 1."""
    raw = os.environ.get(_ENV_VAR)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise DemuxError(f"{_ENV_VAR} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise DemuxError(f"{_ENV_VAR} must be a positive integer, got {raw!r}")
    return n


def map_indexed(fn: Callable[[int], T], n: int) -> list[T]:
    """Evaluate fn(0..n-1), possibly on several threads, in positional order."""
    threads = min(thread_count(), n) if n else 1
    out: list[T] = [None] * n  # type: ignore[list-item]
    if threads <= 1:
        for i in range(n):
            out[i] = fn(i)
        return out

    step = (n + threads - 1) // threads

    def run_chunk(start: int) -> None:
        for i in range(start, min(start + step, n)):
            out[i] = fn(i)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(run_chunk, range(0, n, step)))
    return out
