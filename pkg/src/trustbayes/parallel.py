"""Fixed-chunk work scheduling.

Work is split into chunks whose boundaries depend only on the problem
size, never on the worker count, and results are gathered in chunk
order.  Raising or lowering the thread count therefore cannot change a
single output bit.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

from .errors import InputError

THREADS_ENV = "TRUSTBAYES_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def resolve_threads(threads: int | None = None) -> int:
    """Explicit argument wins, then the TRUSTBAYES_THREADS env var, then 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        if raw:
            try:
                threads = int(raw)
            except ValueError as exc:
                raise InputError(f"{THREADS_ENV} must be an integer, got {raw!r}") from exc
        else:
            threads = 1
    if not isinstance(threads, int) or threads < 1:
        raise InputError(f"thread count must be a positive integer, got {threads!r}")
    return threads


def span_chunks(total: int, chunk_size: int) -> list[tuple[int, int]]:
    """Half-open index ranges covering [0, total) in fixed-size pieces."""
    if chunk_size < 1:
        raise InputError("chunk_size must be >= 1")
    return [(lo, min(lo + chunk_size, total)) for lo in range(0, total, chunk_size)]


def map_chunks(fn: Callable[[T], R], chunks: Sequence[T], threads: int | None = None) -> list[R]:
    """Apply fn to every chunk, returning results in chunk order."""
    threads = resolve_threads(threads)
    if threads == 1 or len(chunks) <= 1:
        return [fn(chunk) for chunk in chunks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, chunks))
