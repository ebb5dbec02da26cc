"""Deterministic chunked execution of data-parallel kernels.

Work is split into fixed-size chunks whose boundaries do not depend on the
thread count, each chunk is computed by a pure function, and results are
combined in chunk order.  Numeric output is therefore bitwise identical for
any ``threads`` value.
"""

from concurrent.futures import ThreadPoolExecutor

# Fixed detector-chunk size; changing it regroups cross-detector reductions,
# so it is a constant rather than a tunable.
DETECTOR_CHUNK = 16


def chunk_ranges(n, size):
    """Split ``range(n)`` into (start, stop) pairs of at most ``size``."""
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def map_chunks(fn, n, size, threads=1):
    """Apply ``fn(start, stop)`` over fixed chunks, returning results in order.

    ``fn`` must not mutate shared state; with ``threads > 1`` chunks run on a
    thread pool (numpy releases the GIL in array kernels).
    """
    ranges = chunk_ranges(n, size)
    if threads <= 1 or len(ranges) <= 1:
        return [fn(s, e) for s, e in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda se: fn(se[0], se[1]), ranges))
