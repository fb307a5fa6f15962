"""Degree-count fluctuations: exact moments and empirical covariance.

Positions are edge-resolution labels ``(s, i)`` as in :mod:`pa_clt.model`;
``PA_t`` corresponds to ``(t + 1, 0)``.  Degree-indexed vectors cover
``k = m..kmax`` and entry ``k`` lives at index ``k - m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, ParameterError, ShapeError
from .model import GraphState, ModelParams


def _check_position(params: ModelParams, s: int, i: int) -> tuple[int, int]:
    """Canonical ``(s, i)`` with ``0 <= i < m``; ``(s, m)`` maps to ``(s + 1, 0)``."""
    m = params.m
    if (s, i) == (1, m):
        return 2, 0
    if s < 2 or not 0 <= i <= m:
        raise ParameterError(f"(s, i) = ({s}, {i}) is not a reachable position for m={m}")
    if i == m:
        return s + 1, 0
    return s, i


def _check_kmax(params: ModelParams, kmax: int) -> None:
    if kmax < params.m:
        raise ParameterError(f"kmax={kmax} below m={params.m}")


@dataclass
class ExpectationTable:
    """Exact ``E[N_k(s, i)]`` for ``k = m..kmax``."""

    params: ModelParams
    s: int
    i: int
    kmax: int
    values: np.ndarray

    def __getitem__(self, k: int) -> float:
        if k < self.params.m or k > self.kmax:
            return 0.0 if k < self.params.m else float("nan")
        return float(self.values[k - self.params.m])


def expectation_step(values: np.ndarray, params: ModelParams, s: int, i: int) -> np.ndarray:
    """Apply one edge of the mean recursion, from ``(s, i)`` to ``(s, i + 1)``.

    Truncation at the top of ``values`` is exact: degree ``j`` is fed only by
    degrees ``j`` and ``j - 1``.
    """
    m, delta = params.m, params.delta
    ks = np.arange(m, m + values.shape[0], dtype=float)
    denom = s * (2 * m + delta) - 2 * m + i
    out = values * (1.0 - (ks + delta) / denom)
    out[1:] += (ks[:-1] + delta) / denom * values[:-1]
    if i + 1 == m:
        out[0] += 1.0
    return out


def iter_expected_counts(params: ModelParams, kmax: int, s_stop: int):
    """Yield ``(s, i, values)`` for every position from PA_1 up to ``(s_stop, 0)``."""
    _check_kmax(params, kmax)
    values = np.zeros(kmax - params.m + 1)
    values[0] = 2.0
    s, i = 2, 0
    while True:
        yield s, i, values
        if s >= s_stop:
            return
        values = expectation_step(values, params, s, i)
        i += 1
        if i == params.m:
            s, i = s + 1, 0


def exact_expected_counts(params: ModelParams, s: int, i: int, kmax: int) -> ExpectationTable:
    """``E[N_k(s, i)]`` by iterating the one-edge mean recursion from PA_1."""
    s_c, i_c = _check_position(params, s, i)
    _check_kmax(params, kmax)
    values = None
    for s_now, i_now, v in iter_expected_counts(params, kmax, s_c):
        values = v
        if (s_now, i_now) == (s_c, i_c):
            break
    if i_c > 0:
        # iter_expected_counts stops at (s_c, 0); walk the remaining edges.
        values = values.copy()
        for r in range(i_c):
            values = expectation_step(values, params, s_c, r)
    return ExpectationTable(params, s, i, kmax, values.copy())


def exact_count_moments(params: ModelParams, times, kmax: int):
    """Exact mean vector and covariance matrix of ``(N_m, .., N_kmax)`` at ``PA_t``.

    The attachment probabilities are linear in the counts, so the first two
    moments obey a closed recursion.  Per edge with total weight ``D``::

        C' = C + (T C + C T') / D + sum_j w_j u_j u_j' - (T mu)(T mu)' / D^2

    where ``T`` moves weight from degree ``j`` to ``j + 1`` at rate ``j + delta``,
    ``u_j = e_{j+1} - e_j`` and ``w_j = (j + delta) mu_j / D``.

    Args:
        params: model parameters.
        times: iterable of times ``t >= 1``.
        kmax: top degree tracked.

    Returns:
        dict ``t -> (mean, cov)``.
    """
    _check_kmax(params, kmax)
    m, delta = params.m, params.delta
    times = sorted(set(int(t) for t in times))
    if not times or times[0] < 1:
        raise ParameterError("times must be >= 1")
    n = kmax - m + 1
    rate = np.arange(m, kmax + 1) + delta
    mu = np.zeros(n)
    mu[0] = 2.0
    cov = np.zeros((n, n))
    out = {}
    t = 1
    idx = np.arange(n)
    while True:
        if t in times:
            out[t] = (mu.copy(), cov.copy())
        if t == times[-1]:
            return out
        s = t + 1
        for i in range(m):
            denom = s * (2 * m + delta) - 2 * m + i
            # T @ cov, with T lower bidiagonal
            tc = -rate[:, None] * cov
            tc[1:] += rate[:-1, None] * cov[:-1]
            tmu = -rate * mu
            tmu[1:] += rate[:-1] * mu[:-1]
            w = rate * mu / denom
            noise = np.zeros((n, n))
            diag = w.copy()
            diag[1:] += w[:-1]
            noise[idx, idx] = diag
            noise[idx[:-1], idx[1:]] = -w[:-1]
            noise[idx[1:], idx[:-1]] = -w[:-1]
            cov = cov + (tc + tc.T) / denom + noise - np.outer(tmu, tmu) / denom**2
            mu = mu + tmu / denom
            if i + 1 == m:
                mu[0] += 1.0
        t += 1


@dataclass
class FluctuationVector:
    """``sqrt(t) (N_k / t - c_k)`` for ``k = m..kmax`` at time ``t``."""

    params: ModelParams
    time: int
    kmax: int
    centering: str
    entries: np.ndarray


CENTERINGS = ("exact_mean", "theoretical")


def centering_vector(params: ModelParams, time: int, kmax: int, centering: str) -> np.ndarray:
    """Centring ``c_k`` for ``k = m..kmax``: limiting pmf or exact ``E[N_k]/t``."""
    if centering == "theoretical":
        from .asymptotics import limiting_pmf

        return np.array([limiting_pmf(params, k) for k in range(params.m, kmax + 1)])
    if centering == "exact_mean":
        table = exact_expected_counts(params, time + 1, 0, kmax)
        return table.values / time
    raise ParameterError(f"unknown centering {centering!r}; expected one of {CENTERINGS}")


def fluctuation_from_counts(counts, params: ModelParams, time: int, kmax: int,
                            centering: str = "exact_mean", center=None) -> FluctuationVector:
    """Fluctuation vector from a raw count array indexed by degree.

    ``counts`` may be shorter than ``kmax + 1``; missing degrees count as 0.
    """
    _check_kmax(params, kmax)
    if time < 1:
        raise ParameterError("time must be >= 1")
    counts = np.asarray(counts)
    n = np.zeros(kmax + 1)
    top = min(kmax + 1, counts.shape[-1])
    n[:top] = counts[:top]
    if center is None:
        center = centering_vector(params, time, kmax, centering)
    x = np.sqrt(time) * (n[params.m:] / time - center)
    return FluctuationVector(params, time, kmax, centering, x)


def fluctuation_vector(state: GraphState, kmax: int,
                       centering: str = "exact_mean") -> FluctuationVector:
    """Fluctuation vector of a state sitting on an arrival boundary (``i == 0``)."""
    if state.i != 0:
        raise ShapeError(f"state at sub-step i={state.i}; fluctuations need i == 0")
    return fluctuation_from_counts(state.counts_view, state.params, state.time, kmax, centering)


@dataclass
class CovarianceEstimate:
    """Finalized sample covariance over degrees ``kmin..kmax``."""

    kmin: int
    kmax: int
    n: int
    mean: np.ndarray
    values: np.ndarray
    stderr: np.ndarray

    def entry(self, r: int, l: int) -> float:
        return float(self.values[r - self.kmin, l - self.kmin])


@dataclass
class CovarianceAccumulator:
    """Streaming mean and co-moment matrix, mergeable across workers."""

    kmin: int
    kmax: int
    n: int = 0
    mean: np.ndarray = field(default=None)
    comoment: np.ndarray = field(default=None)

    def __post_init__(self):
        dim = self.kmax - self.kmin + 1
        if dim < 1:
            raise ShapeError("empty degree range")
        if self.mean is None:
            self.mean = np.zeros(dim)
        if self.comoment is None:
            self.comoment = np.zeros((dim, dim))

    @property
    def dim(self) -> int:
        return self.kmax - self.kmin + 1

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ShapeError(f"vector length {x.shape[-1]} != {self.dim}")
        return x

    def add(self, x) -> "CovarianceAccumulator":
        """Welford update with a single vector."""
        if isinstance(x, FluctuationVector):
            x = x.entries
        x = self._check(x)
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.comoment += np.outer(d, x - self.mean)
        return self

    def add_batch(self, xs) -> "CovarianceAccumulator":
        xs = self._check(np.atleast_2d(xs))
        if xs.shape[0] == 0:
            return self
        mean = xs.mean(axis=0)
        centred = xs - mean
        other = CovarianceAccumulator(self.kmin, self.kmax, xs.shape[0], mean, centred.T @ centred)
        merged = self.merge(other)
        self.n, self.mean, self.comoment = merged.n, merged.mean, merged.comoment
        return self

    def merge(self, other: "CovarianceAccumulator") -> "CovarianceAccumulator":
        """Pairwise combination; ``a.merge(b)`` equals ``b.merge(a)`` up to rounding."""
        if (self.kmin, self.kmax) != (other.kmin, other.kmax):
            raise ShapeError(
                f"degree ranges differ: [{self.kmin},{self.kmax}] vs [{other.kmin},{other.kmax}]")
        n = self.n + other.n
        if n == 0:
            return CovarianceAccumulator(self.kmin, self.kmax)
        d = other.mean - self.mean
        mean = (self.n * self.mean + other.n * other.mean) / n
        comoment = self.comoment + other.comoment + np.outer(d, d) * (self.n * other.n / n)
        comoment = 0.5 * (comoment + comoment.T)
        return CovarianceAccumulator(self.kmin, self.kmax, n, mean, comoment)

    def finalize(self) -> CovarianceEstimate:
        """Unbiased covariance and normal-theory standard errors."""
        if self.n < 2:
            raise InsufficientDataError(f"need at least 2 vectors, have {self.n}")
        cov = self.comoment / (self.n - 1)
        cov = 0.5 * (cov + cov.T)
        d = np.diag(cov)
        stderr = np.sqrt((np.outer(d, d) + cov**2) / (self.n - 1))
        return CovarianceEstimate(self.kmin, self.kmax, self.n, self.mean.copy(), cov, stderr)
