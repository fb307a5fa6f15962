"""Degree-count martingales and exact checks of their defining properties.

For a degree ``k`` the process

    M(s, i) = a(s, i) * sum_{j=m}^{k} b_j (N_j(s, i) - E[N_j(s, i)])

is a martingale in the edge-resolution filtration.  ``b_j`` comes from
:func:`pa_clt.asymptotics.mixing_coefficient`; ``a`` is a scaling coefficient
fixed by ``a(pos) = a(next) * f(pos)`` with the one-edge factor

    f(t, r) = 1 - (k + delta) / (t (2m + delta) - 2m + r).

Normalization: ``a = 1`` at the anchor ``(t0, 0)``, where ``t0`` is the first
time ``>= max(2, k - m + 1)`` from which every factor is positive.  Later
positions divide by the factors; earlier ones multiply, so ``a`` is finite
everywhere and may be zero or negative before the anchor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .asymptotics import SignedLogValue, mixing_row
from .degree_stats import _check_position, exact_expected_counts, expectation_step
from .errors import DegenerateParameterError, ParameterError, ShapeError
from .model import GraphState, ModelParams


def _denominators(params: ModelParams, lo: int, hi: int) -> np.ndarray:
    """Total weight at the linear positions ``lo..hi-1``; position ``n`` is ``(2 + n // m, n % m)``."""
    m = params.m
    n = np.arange(lo, hi)
    t = 2 + n // m
    r = n % m
    return t * params.weight_rate - 2 * m + r


def _linear(params: ModelParams, s: int, i: int) -> int:
    s, i = _check_position(params, s, i)
    return (s - 2) * params.m + i


def anchor_time(params: ModelParams, k: int) -> int:
    """First time ``t0 >= max(2, k - m + 1)`` with ``f(t, r) > 0`` for all ``t >= t0``."""
    m = params.m
    t = max(2, k - m + 1)
    # f(t, r) increases with t and r, so f(t, 0) > 0 suffices
    while t * params.weight_rate - 2 * m <= k + params.delta:
        t += 1
    return t


class ScalingCoefficients:
    """Scaling coefficients ``a(s, i)`` for one degree ``k``."""

    def __init__(self, params: ModelParams, k: int):
        if int(k) != k or k < params.m:
            raise ParameterError(f"k={k} must be an integer >= m={params.m}")
        self.params = params
        self.k = int(k)
        self.anchor = anchor_time(params, k)
        self._anchor_pos = (self.anchor - 2) * params.m

    def _log_factors(self, lo: int, hi: int):
        """Signs and ``log|f|`` over positions ``lo..hi-1``; zeros get sign 0."""
        denom = _denominators(self.params, lo, hi)
        num = denom - (self.k + self.params.delta)
        sign = np.sign(num).astype(int)
        with np.errstate(divide="ignore"):
            logs = np.log(np.abs(num)) - np.log(denom)
        return sign, logs

    def value(self, s: int, i: int) -> SignedLogValue:
        pos = _linear(self.params, s, i)
        if pos >= self._anchor_pos:
            _, logs = self._log_factors(self._anchor_pos, pos)
            return SignedLogValue(1, -math.fsum(logs))
        sign, logs = self._log_factors(pos, self._anchor_pos)
        if (sign == 0).any():
            return SignedLogValue(0, -math.inf)
        total_sign = -1 if (sign < 0).sum() % 2 else 1
        return SignedLogValue(total_sign, math.fsum(logs))

    def factor(self, s: int, i: int) -> float:
        """One-edge factor ``f`` at the draw pending in position ``(s, i)``, ``i < m``."""
        if not 0 <= i < self.params.m:
            raise ParameterError("a draw is pending only for 0 <= i < m")
        d = s * self.params.weight_rate - 2 * self.params.m + i
        return 1.0 - (self.k + self.params.delta) / d

    def log_arrival_path(self, s_values) -> np.ndarray:
        """``log a(s, 0)`` for each ``s`` in ``s_values`` (all at or after the anchor)."""
        s_values = np.asarray(s_values, dtype=np.int64)
        if (s_values < self.anchor).any():
            raise DegenerateParameterError(
                f"times before the anchor t0={self.anchor} may have a(s,0) <= 0",
                t=int(s_values.min()))
        top = (int(s_values.max()) - 2) * self.params.m
        _, logs = self._log_factors(self._anchor_pos, top)
        cum = np.concatenate([[0.0], np.cumsum(logs)])
        return -cum[(s_values - 2) * self.params.m - self._anchor_pos]


def scaling_coefficient(params: ModelParams, s: int, i: int, k: int) -> SignedLogValue:
    """``a(s, i)`` for degree ``k`` in sign/log form."""
    return ScalingCoefficients(params, k).value(s, i)


@dataclass
class MartingaleValue:
    s: int
    i: int
    k: int
    value: float


def _mixed_deviation(counts, expected: np.ndarray, params: ModelParams, k: int):
    """``sum_j b_j (N_j - E_j)`` and ``sum_j |b_j| (N_j + |E_j|)``."""
    m = params.m
    b = mixing_row(params, k)
    n = np.zeros(k - m + 1)
    counts = np.asarray(counts)
    top = min(k + 1, counts.shape[0])
    if top > m:
        n[: top - m] = counts[m:top]
    e = np.asarray(expected, dtype=float)[: k - m + 1]
    return float(b @ (n - e)), float(np.abs(b) @ (n + np.abs(e)))


def martingale_value(counts, table, params: ModelParams, k: int, s: int | None = None,
                     i: int | None = None) -> MartingaleValue:
    """``M(s, i)`` from degree counts and the matching expectation table.

    ``counts`` is either a :class:`GraphState` or a count array indexed by
    degree; in the latter case ``(s, i)`` default to the table's position.
    """
    if isinstance(counts, GraphState):
        s_c, i_c, counts = counts.s, counts.i, counts.counts_view
    else:
        s_c = table.s if s is None else s
        i_c = table.i if i is None else i
    if _check_position(params, s_c, i_c) != _check_position(params, table.s, table.i):
        raise ShapeError(f"counts at ({s_c}, {i_c}) but expectations at ({table.s}, {table.i})")
    if table.kmax < k:
        raise ShapeError(f"expectation table stops at {table.kmax} < k={k}")
    a = scaling_coefficient(params, s_c, i_c, k)
    dev, _ = _mixed_deviation(counts, table.values, params, k)
    return MartingaleValue(s_c, i_c, k, a.value * dev if a.sign else 0.0)


def _common_scale(*values: SignedLogValue) -> list[float]:
    """Values divided by the largest magnitude among them (avoids overflow)."""
    top = max((v.log_magnitude for v in values if v.sign), default=0.0)
    return [v.sign * math.exp(v.log_magnitude - top) if v.sign else 0.0 for v in values]


def compatibility_residual(params: ModelParams, s: int, i: int, k: int) -> float:
    """Largest relative residual of the conditions that make ``M`` a martingale.

    For ``m <= j < k``::

        a(s,i+1) [b_j (1 - (j+delta)/D) + b_{j+1} (j+delta)/D] = a(s,i) b_j

    and for ``j = k``: ``a(s,i+1) b_k (1 - (k+delta)/D) = a(s,i) b_k``,
    with ``D = s(2m + delta) - 2m + i``.
    """
    m = params.m
    if not 0 <= i < m:
        raise ParameterError("need 0 <= i < m")
    coeffs = ScalingCoefficients(params, k)
    a_now, a_next = _common_scale(coeffs.value(s, i), coeffs.value(s, i + 1))
    b = mixing_row(params, k)
    denom = s * params.weight_rate - 2 * m + i
    worst = 0.0
    for j in range(m, k + 1):
        x = (j + params.delta) / denom
        bj = b[j - m]
        bnext = b[j + 1 - m] if j < k else 0.0
        lhs = a_next * (bj * (1 - x) + bnext * x)
        rhs = a_now * bj
        scale = abs(a_next) * (abs(bj) + abs(bnext * x)) + abs(rhs)
        if scale:
            worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def _counts_after(counts: np.ndarray, d: int, completes: bool, m: int) -> np.ndarray:
    out = counts.copy()
    out[d] -= 1
    out[d + 1] += 1
    if completes:
        out[m] += 1
    return out


def one_step_residual(params: ModelParams, counts, s: int, i: int, k: int,
                      expected=None) -> float:
    """Relative gap between ``E[M(s, i+1) | counts]`` and ``M(s, i)``.

    The conditional expectation enumerates every degree class ``d`` present,
    hit with probability ``(d + delta) N_d / D``.  ``expected`` defaults to the
    exact mean at ``(s, i)``; it is pushed one edge forward by the mean
    recursion.  The gap is scaled by ``|a| sum_j |b_j| (N_j + |E_j|)``, the
    size of the terms being cancelled.
    """
    m = params.m
    if not 0 <= i < m:
        raise ParameterError("a draw is pending only for 0 <= i < m")
    counts = np.asarray(counts, dtype=float)
    width = max(k + 2, counts.shape[0] + 1)
    n = np.zeros(width)
    n[: counts.shape[0]] = counts
    if expected is None:
        expected = exact_expected_counts(params, s, i, k).values
    expected = np.asarray(expected, dtype=float)[: k - m + 1]
    expected_next = expectation_step(expected, params, s, i)
    coeffs = ScalingCoefficients(params, k)
    a_now, a_next = _common_scale(coeffs.value(s, i), coeffs.value(s, i + 1))
    denom = s * params.weight_rate - 2 * m + i
    completes = i + 1 == m
    mean_next = 0.0
    for d in np.flatnonzero(n):
        prob = (d + params.delta) * n[d] / denom
        dev, _ = _mixed_deviation(_counts_after(n, d, completes, m), expected_next, params, k)
        mean_next += prob * dev
    mean_next *= a_next
    dev_now, size = _mixed_deviation(n, expected, params, k)
    now = a_now * dev_now
    scale = max(abs(a_now), abs(a_next)) * size
    return abs(mean_next - now) / scale if scale else abs(mean_next - now)


def one_step_expectation_check(state: GraphState, k: int) -> float:
    """:func:`one_step_residual` at the draw pending in ``state``."""
    return one_step_residual(state.params, state.counts_view, state.s, state.i, k)


def scaling_exponent(params: ModelParams, k: int, scaling: str = "arrival") -> float:
    """Growth exponent of ``a(s, 0)`` in ``s``.

    ``"arrival"`` gives the exact exponent ``m (k + delta) / (2m + delta)``;
    ``"edge"`` gives ``(k + delta) / (2m + delta)``, which matches only when
    ``m = 1``.
    """
    base = (k + params.delta) / params.weight_rate
    if scaling == "arrival":
        return params.m * base
    if scaling == "edge":
        return base
    raise ParameterError(f"unknown scaling {scaling!r}")


def fit_scaling_exponent(params: ModelParams, k: int, s_grid) -> float:
    """Least-squares slope of ``log a(s, 0)`` against ``log s`` over ``s_grid``."""
    s_grid = np.asarray(s_grid, dtype=np.int64)
    if s_grid.ndim != 1 or s_grid.shape[0] < 3:
        raise ParameterError("s_grid needs at least 3 points")
    if (np.diff(s_grid) <= 0).any():
        raise ParameterError("s_grid must be strictly increasing")
    if s_grid[-1] < 10_000:
        raise ParameterError("s_grid must reach at least 1e4")
    logs = ScalingCoefficients(params, k).log_arrival_path(s_grid)
    slope, _ = np.polyfit(np.log(s_grid.astype(float)), logs, 1)
    return float(slope)
