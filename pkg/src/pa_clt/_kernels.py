"""Compiled inner loops for the attachment process.

All kernels take the raw arrays of a graph state and a ``numpy.random.Generator``.
Random numbers are consumed in the same order as the pure-Python step API, so a
state advanced here and a state advanced edge by edge agree exactly.
"""

import numpy as np
from numba import njit

# Hard cap on rejection rounds; hitting it means the state is corrupt.
MAX_REJECTIONS = 1_000_000

_TWO53 = 2**53


@njit(cache=True, inline="always")
def uniform_index(rng, n):
    """Exactly uniform integer in ``[0, n)``.

    ``rng.random()`` carries 53 random bits; draws past the largest multiple
    of ``n`` are rejected.  Much cheaper than ``Generator.integers`` in
    compiled code.
    """
    limit = _TWO53 - _TWO53 % n
    while True:
        u = np.int64(rng.random() * _TWO53)
        if u < limit:
            return u % n


@njit(cache=True, inline="always")
def draw_fast(degrees, pool, pool_size, s, delta, rng):
    """One attachment target among vertices ``0..s-1``; -1 signals a broken state."""
    if delta > 0.0:
        total = pool_size + delta * s
        if rng.random() * total < pool_size:
            return pool[uniform_index(rng, pool_size)]
        return uniform_index(rng, s)
    if delta == 0.0:
        return pool[uniform_index(rng, pool_size)]
    for _ in range(MAX_REJECTIONS):
        v = pool[uniform_index(rng, pool_size)]
        k = degrees[v]
        if rng.random() * k < k + delta:
            return v
    return -1


@njit(cache=True)
def draw_exact(degrees, s, delta, rng):
    """Linear scan of the cumulative weights ``degrees[v] + delta``."""
    total = 0.0
    for v in range(s):
        total += degrees[v] + delta
    u = rng.random() * total
    acc = 0.0
    last = -1
    for v in range(s):
        w = degrees[v] + delta
        if w > 0.0:
            last = v
            acc += w
            if u < acc:
                return v
    return last


@njit(cache=True)
def draw_fast_many(degrees, pool, pool_size, s, delta, n, rng):
    out = np.empty(n, np.int64)
    for j in range(n):
        out[j] = draw_fast(degrees, pool, pool_size, s, delta, rng)
    return out


@njit(cache=True)
def draw_exact_many(degrees, s, delta, n, rng):
    out = np.empty(n, np.int64)
    for j in range(n):
        out[j] = draw_exact(degrees, s, delta, rng)
    return out


@njit(cache=True, inline="always")
def _residuals(counts, maxdeg, s, i, m, delta, pool_size):
    """Largest violation of the count identities at sub-step (s, i)."""
    n = 0
    kn = 0
    weighted = 0.0
    for k in range(maxdeg + 1):
        c = counts[k]
        n += c
        kn += k * c
        weighted += (k + delta) * c
    worst = abs(weighted - (s * (2 * m + delta) - 2 * m + i))
    if n != s:
        worst = max(worst, abs(n - s))
    if kn != 2 * m * (s - 1) + i:
        worst = max(worst, abs(kn - (2 * m * (s - 1) + i)))
    if kn != pool_size:
        worst = max(worst, abs(kn - pool_size))
    for k in range(min(m, maxdeg + 1)):
        if counts[k] != 0:
            worst = max(worst, abs(counts[k]))
    return worst


@njit(cache=True, inline="always")
def advance(degrees, counts, pool, pool_size, s, i, maxdeg, m, delta,
            n_edges, rng, check):
    """Attach ``n_edges`` edges starting from sub-step (s, i).

    Returns the new ``(pool_size, s, i, maxdeg, worst_residual)``; a negative
    residual flags a sampler failure.
    """
    worst = 0.0
    if check:
        worst = _residuals(counts, maxdeg, s, i, m, delta, pool_size)
    for _ in range(n_edges):
        v = draw_fast(degrees, pool, pool_size, s, delta, rng)
        if v < 0:
            return pool_size, s, i, maxdeg, -1.0
        k = degrees[v]
        counts[k] -= 1
        counts[k + 1] += 1
        if k + 1 > maxdeg:
            maxdeg = k + 1
        degrees[v] = k + 1
        pool[pool_size] = v
        pool_size += 1
        i += 1
        if i == m:
            degrees[s] = m
            counts[m] += 1
            for _ in range(m):
                pool[pool_size] = s
                pool_size += 1
            s += 1
            i = 0
        if check:
            worst = max(worst, _residuals(counts, maxdeg, s, i, m, delta, pool_size))
    return pool_size, s, i, maxdeg, worst


@njit(cache=True)
def count_snapshots(m, delta, times, kmax, rng):
    """Run one replication from PA_1 and record degree counts at each time.

    ``times`` must be increasing and ``>= 1``; row j holds ``N_k`` for
    ``k = 0..kmax`` of the graph PA_{times[j]} (all ``times[j] + 1`` vertices).
    """
    t_final = times[-1]
    degrees = np.zeros(t_final + 1, np.int64)
    counts = np.zeros(m * t_final + 2, np.int64)
    pool = np.empty(2 * m * t_final, np.int64)
    degrees[0] = m
    degrees[1] = m
    counts[m] = 2
    pool_size = 0
    for _ in range(m):
        pool[pool_size] = 0
        pool[pool_size + 1] = 1
        pool_size += 2
    out = np.zeros((times.shape[0], kmax + 1), np.int64)
    nxt = 0
    while nxt < times.shape[0] and times[nxt] == 1:
        for k in range(min(kmax, m * t_final + 1) + 1):
            out[nxt, k] = counts[k]
        nxt += 1
    maxdeg = m
    s = 2
    while nxt < times.shape[0]:
        pool_size, s, _, maxdeg, res = advance(
            degrees, counts, pool, pool_size, s, 0, maxdeg, m, delta, m, rng, False)
        if res < 0.0:
            out[0, 0] = -1
            return out
        while nxt < times.shape[0] and times[nxt] == s - 1:
            for k in range(min(kmax, counts.shape[0] - 1) + 1):
                out[nxt, k] = counts[k]
            nxt += 1
    return out
