"""Limiting degree distribution and the Gaussian limit of count fluctuations.

The limiting covariance is an alternating sum whose terms exceed the result by
many orders of magnitude, so the matrix routines work in a private mpmath
context whose precision is chosen from the size of the largest mixing
coefficient.  Scalar helpers that need no cancellation stay in log space.

Two time scalings are available through ``scaling``:

``"arrival"`` (default)
    The mixing coefficients grow like ``s ** (m (k + delta) / (2m + delta))``
    in the number ``s`` of arrivals.  This is the scaling under which the
    result matches the exact finite-``s`` covariance.
``"edge"``
    Uses ``(k + delta) / (2m + delta)`` instead.  It coincides with
    ``"arrival"`` when ``m = 1`` and overstates the covariance otherwise;
    kept for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from mpmath.ctx_mp import MPContext

from .errors import ParameterError
from .model import ModelParams

DEFAULT_KMAX = 30
SCALINGS = ("arrival", "edge")

# Digits kept beyond the estimated cancellation.
_GUARD_DIGITS = 30
# A result smaller than (term magnitude) * 10**-(dps - _SNAP_SLACK) is a rounding
# residue of an exact zero.
_SNAP_SLACK = 10


@dataclass(frozen=True)
class SignedLogValue:
    """``sign * exp(log_magnitude)``; ``sign == 0`` encodes an exact zero."""

    sign: int
    log_magnitude: float

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        return self.sign * math.exp(self.log_magnitude)

    @classmethod
    def from_float(cls, x: float) -> "SignedLogValue":
        if x == 0:
            return cls(0, -math.inf)
        return cls(1 if x > 0 else -1, math.log(abs(x)))

    def __mul__(self, other: "SignedLogValue") -> "SignedLogValue":
        if self.sign == 0 or other.sign == 0:
            return SignedLogValue(0, -math.inf)
        return SignedLogValue(self.sign * other.sign, self.log_magnitude + other.log_magnitude)


def _check_degree(params: ModelParams, k: int, name: str = "k") -> None:
    if int(k) != k or k < params.m:
        raise ParameterError(f"{name}={k} must be an integer >= m={params.m}")


def _check_scaling(scaling: str) -> None:
    if scaling not in SCALINGS:
        raise ParameterError(f"unknown scaling {scaling!r}; expected one of {SCALINGS}")


def limiting_pmf(params: ModelParams, k: int) -> float:
    """Almost-sure limit of the fraction of vertices with degree ``k``."""
    _check_degree(params, k)
    m, d = params.m, params.delta
    c = d / m
    log_p = (math.log(2 + c) + math.lgamma(k + d) + math.lgamma(m + 2 + d + c)
             - math.lgamma(m + d) - math.lgamma(k + 3 + d + c))
    return math.exp(log_p)


def weighted_mass(params: ModelParams) -> float:
    """``sum_k (k + delta) p_k``, which telescopes to ``2m + delta``."""
    return params.weight_rate


def mixing_coefficient(params: ModelParams, j: int, k: int) -> SignedLogValue:
    """Weight of ``N_j`` in the degree-``k`` martingale.

    ``(-1)**(k-j) Gamma(k+delta) / ((k-j)! Gamma(j+delta))`` for ``j <= k``,
    zero for ``j > k``.  Evaluated as a product so that ``j + delta <= 0``
    (possible only for ``j < m``) keeps the correct sign.
    """
    _check_degree(params, k)
    if int(j) != j or j < 1:
        raise ParameterError(f"j={j} must be a positive integer")
    if j > k:
        return SignedLogValue(0, -math.inf)
    d = params.delta
    sign = 1
    logs = []
    for t in range(j, k):
        num = t + d
        if num == 0:
            return SignedLogValue(0, -math.inf)
        if num < 0:
            sign = -sign
        logs.append(math.log(abs(num)) - math.log(k - t))
    if (k - j) % 2:
        sign = -sign
    return SignedLogValue(sign, math.fsum(logs))


def mixing_row(params: ModelParams, k: int) -> np.ndarray:
    """Floats ``b_j`` for ``j = m..k`` of the degree-``k`` martingale."""
    return np.array([mixing_coefficient(params, j, k).value for j in range(params.m, k + 1)])


# ---------------------------------------------------------------------------
# High-precision tables


def _log10_max_mixing(params: ModelParams, kmax: int) -> float:
    m, d = params.m, params.delta
    best = 0.0
    for r in range(m, kmax + 1):
        for j in range(m, r + 1):
            v = (math.lgamma(r + d) - math.lgamma(j + d) - math.lgamma(r - j + 1)) / math.log(10)
            best = max(best, v)
    return best


def working_digits(params: ModelParams, kmax: int) -> int:
    """Decimal digits needed to evaluate covariance matrices up to ``kmax``."""
    n = kmax - params.m + 1
    return _GUARD_DIGITS + math.ceil(4 * _log10_max_mixing(params, kmax) + 0.61 * n)


def _split_sum(ctx, terms):
    """Sum positive and negative parts separately; also return the largest |term|."""
    pos = [t for t in terms if t > 0]
    neg = [t for t in terms if t < 0]
    total = ctx.fsum(pos) + ctx.fsum(neg)
    biggest = max((abs(t) for t in terms), default=ctx.zero)
    return total, biggest


class _Tables:
    """mpmath values of ``p_k``, ``b_j^{(r)}`` and derived sums for one parameter set."""

    def __init__(self, params: ModelParams, kmax: int, dps: int):
        self.params = params
        self.kmax = kmax
        ctx = self.ctx = MPContext()
        ctx.dps = dps
        self.dps = dps
        m = params.m
        d = self.d = ctx.mpf(params.delta)
        c = self.c = d / m
        self.W = 2 * m + d
        top = kmax + 1
        # p[k - m] for k = m..kmax+1, by the ratio p_{k+1}/p_k = (k+d)/(k+3+d+c)
        p = [(2 + c) / (m + 2 + d + c)]
        for k in range(m, top):
            p.append(p[-1] * (k + d) / (k + 3 + d + c))
        self.p = p
        # b[r - m][j - m] for r = m..kmax, j = m..kmax+1; built downward from b_r^r = 1
        self.b = []
        for r in range(m, kmax + 1):
            row = [ctx.zero] * (top - m + 1)
            row[r - m] = ctx.one
            for j in range(r - 1, m - 1, -1):
                row[j - m] = row[j + 1 - m] * (j + d) / (j - r)
            self.b.append(row)
        self.w = [(h + d) * p[h - m] / self.W for h in range(m, top + 1)]
        # g_r = b_m^r - (r+d)/W sum_d b_d^r p_d, in closed form
        self.g = [self.b[r - m][0] * (r + 2 + d - ctx.mpf(r) / m) / (r + 2 + d + c)
                  for r in range(m, kmax + 1)]
        self.u = [self.b[r - m][0] - self.g[r - m] for r in range(m, kmax + 1)]

    def coef(self, j: int, r: int):
        """``b_j^{(r)}`` with the zero convention for ``j > r``."""
        if j > r:
            return self.ctx.zero
        return self.b[r - self.params.m][j - self.params.m]

    def increment_kernel(self, r: int, l: int):
        """``a(r, l)`` and the largest term magnitude in its evaluation."""
        m = self.params.m
        bmr, bml = self.coef(m, r), self.coef(m, l)
        terms = []
        wsum = []
        for h in range(m, max(r, l) + 1):
            w = self.w[h - m]
            dr = self.coef(h + 1, r) - self.coef(h, r)
            dl = self.coef(h + 1, l) - self.coef(h, l)
            terms.append(w * (bmr + dr) * (bml + dl))
            if m > 1:
                terms.append(w * (m - 1) * dr * dl)
            wsum.append(w)
        # h > max(r, l): only the b_m b_m part survives, with total weight 1 - partial sum
        terms.append((1 - self.ctx.fsum(wsum)) * bmr * bml)
        terms.append(-self.g[r - m] * self.g[l - m])
        if m > 1:
            terms.append(-(m - 1) * self.u[r - m] * self.u[l - m])
        return _split_sum(self.ctx, terms)

    def rate_constants(self, scaling: str):
        """``(kappa, scale)`` with ``R_Y(r, l) = scale W a(r, l) / (r + l + kappa)``."""
        m, d = self.params.m, self.d
        if scaling == "arrival":
            return 2 + 2 * d + d / m, self.ctx.one / m
        return 2 * m + 3 * d, self.ctx.one


@lru_cache(maxsize=64)
def _tables(params: ModelParams, kmax: int) -> _Tables:
    return _Tables(params, kmax, working_digits(params, kmax))


def _table_for(params: ModelParams, *degrees: int) -> _Tables:
    return _tables(params, max(DEFAULT_KMAX, *degrees))


def _snap(value, magnitude, dps) -> float:
    if magnitude == 0 or abs(value) <= magnitude * 10.0 ** (-(dps - _SNAP_SLACK)):
        return 0.0
    return float(value)


def increment_kernel(params: ModelParams, r: int, l: int) -> float:
    """Covariance kernel ``a(r, l)`` of the mixed martingale increments."""
    _check_degree(params, r, "r")
    _check_degree(params, l, "l")
    tab = _table_for(params, r, l)
    value, biggest = tab.increment_kernel(r, l)
    return _snap(value, biggest, tab.dps)


def mixed_covariance(params: ModelParams, r: int, l: int, scaling: str = "arrival") -> float:
    """Limiting covariance ``R_Y(r, l)`` of the normalized martingales."""
    _check_scaling(scaling)
    _check_degree(params, r, "r")
    _check_degree(params, l, "l")
    tab = _table_for(params, r, l)
    kappa, scale = tab.rate_constants(scaling)
    value, biggest = tab.increment_kernel(r, l)
    factor = scale * tab.W / (r + l + kappa)
    return _snap(factor * value, abs(factor) * biggest, tab.dps)


# ---------------------------------------------------------------------------
# Matrices


@dataclass
class CovarianceMatrix:
    """Symmetric matrix over degrees ``kmin..kmax``."""

    kmin: int
    kmax: int
    values: np.ndarray
    method: str
    scaling: str

    def entry(self, r: int, l: int) -> float:
        return float(self.values[r - self.kmin, l - self.kmin])

    @property
    def degrees(self) -> range:
        return range(self.kmin, self.kmax + 1)


@dataclass
class TransformMatrices:
    """Lower-triangular ``C`` (``c_rl = b_l^{(r)}``) and its inverse ``D``.

    ``C`` and ``D`` hold rounded copies; products should be formed with
    :meth:`identity_residual`, which works at full precision, because the
    entries grow too fast for a double-precision product to be meaningful
    beyond ``kmax`` of about 15.
    """

    kmin: int
    kmax: int
    C: np.ndarray
    D: np.ndarray
    _tab: _Tables

    def _exact(self):
        n = self.kmax - self.kmin + 1
        tab = self._tab
        m = self.kmin
        C = [[tab.coef(l, r) for l in range(m, m + n)] for r in range(m, m + n)]
        D = [[(-1) ** (r - l) * tab.coef(l, r) for l in range(m, m + n)] for r in range(m, m + n)]
        return C, D

    def identity_residual(self) -> float:
        """Largest entry of ``|C D - I|`` and ``|D C - I|``, computed at working precision."""
        C, D = self._exact()
        ctx = self._tab.ctx
        n = len(C)
        worst = ctx.zero
        for A, B in ((C, D), (D, C)):
            for i in range(n):
                for j in range(i + 1):
                    prod = ctx.fsum(A[i][a] * B[a][j] for a in range(j, i + 1))
                    worst = max(worst, abs(prod - (1 if i == j else 0)))
        return float(worst)


def transform_matrices(params: ModelParams, kmax: int = DEFAULT_KMAX) -> TransformMatrices:
    """Change of basis between raw degree counts and the martingale combinations."""
    _check_degree(params, kmax, "kmax")
    tab = _tables(params, kmax)
    m = params.m
    n = kmax - m + 1
    C = np.zeros((n, n))
    D = np.zeros((n, n))
    for r in range(m, kmax + 1):
        for l in range(m, r + 1):
            v = float(tab.coef(l, r))
            C[r - m, l - m] = v
            D[r - m, l - m] = v if (r - l) % 2 == 0 else -v
    return TransformMatrices(m, kmax, C, D, tab)


def binomial_identity_residual(params: ModelParams, r: int, l: int, x) -> float:
    """Relative error of ``sum_t x^(t-l) b_t^(r) b_l^(t) = b_l^(r) (1+x)^(r-l)``."""
    _check_degree(params, r, "r")
    _check_degree(params, l, "l")
    if l > r:
        raise ParameterError("need l <= r")
    tab = _table_for(params, r)
    ctx = tab.ctx
    x = ctx.mpf(x)
    terms = [x ** (t - l) * tab.coef(t, r) * tab.coef(l, t) for t in range(l, r + 1)]
    lhs, biggest = _split_sum(ctx, terms)
    rhs = tab.coef(l, r) * (1 + x) ** (r - l)
    scale = max(abs(rhs), biggest)
    return float(abs(lhs - rhs) / scale) if scale else 0.0


def _abs_matrix(rows) -> np.ndarray:
    return np.array([[abs(float(v)) for v in row] for row in rows])


@lru_cache(maxsize=64)
def _via_transform(params: ModelParams, kmax: int, scaling: str) -> np.ndarray:
    tab = _tables(params, kmax)
    ctx = tab.ctx
    m = params.m
    n = kmax - m + 1
    kappa, scale = tab.rate_constants(scaling)
    ry = [[None] * n for _ in range(n)]
    for a in range(n):
        for b in range(a + 1):
            val, _ = tab.increment_kernel(a + m, b + m)
            ry[a][b] = ry[b][a] = scale * tab.W * val / (a + b + 2 * m + kappa)
    D = [[(-1) ** (i - a) * tab.coef(a + m, i + m) if a <= i else ctx.zero for a in range(n)]
         for i in range(n)]
    half = [[_split_sum(ctx, [D[i][a] * ry[a][b] for a in range(i + 1)])[0] for b in range(n)]
            for i in range(n)]
    absD = _abs_matrix(D)
    magnitude = absD @ _abs_matrix(ry) @ absD.T
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            v, _ = _split_sum(ctx, [half[i][b] * D[j][b] for b in range(j + 1)])
            out[i, j] = out[j, i] = _snap(v, magnitude[i, j], tab.dps)
    return out


def limit_covariance_via_transform(params: ModelParams, kmax: int = DEFAULT_KMAX,
                                   scaling: str = "arrival") -> CovarianceMatrix:
    """Limiting fluctuation covariance as ``D R_Y D^T`` over degrees ``m..kmax``."""
    _check_scaling(scaling)
    _check_degree(params, kmax, "kmax")
    values = _via_transform(params, kmax, scaling).copy()
    return CovarianceMatrix(params.m, kmax, values, "transform", scaling)


def _closed_form_blocks(tab: _Tables, kmax: int, scaling: str, flip_noise_sign: bool):
    """Closed-form covariance over ``m..kmax`` and the matching term magnitudes."""
    ctx = tab.ctx
    m = tab.params.m
    d, c, W = tab.d, tab.c, tab.W
    kappa, scale = tab.rate_constants(scaling)
    n = kmax - m + 1
    fact = [ctx.factorial(j) for j in range(2 * kmax + 2)]

    # gam[a - 2m] = Gamma(kappa + a) / Gamma(kappa + 2m)
    gam = [ctx.one]
    for a in range(2 * m, 2 * kmax + 1):
        gam.append(gam[-1] * (kappa + a))

    def beta(r, l, a):
        # Gamma(kappa + a) (r + l - a)! / Gamma(r + l + 1 + kappa)
        return gam[a - 2 * m] * fact[r + l - a] / gam[r + l + 1 - 2 * m]

    # Factorized double sums: x_l(t) and y_l(t) vectors, then V = X H with H = 1/(t1+t2+kappa)
    def vec(l, numerator):
        out = []
        for t in range(m, kmax + 1):
            if t > l:
                out.append(ctx.zero)
                continue
            sign = -1 if t % 2 else 1
            out.append(sign * numerator(t) / (fact[t - m] * fact[l - t] * (t + 2 + d + c)))
        return out

    X = [vec(l, lambda t: t + 2 + d - ctx.mpf(t) / m) for l in range(m, kmax + 1)]
    Y = [vec(l, lambda t: d + t) for l in range(m, kmax + 1)]
    H = [[1 / (t1 + t2 + 2 * m + kappa) for t2 in range(n)] for t1 in range(n)]
    Hf = _abs_matrix(H)

    def half(V):
        return [[_split_sum(ctx, [V[r][t2] * H[t1][t2] for t2 in range(r + 1)])[0]
                 for t1 in range(n)] for r in range(n)]

    XH, YH = half(X), half(Y)
    Xf, Yf = _abs_matrix(X), _abs_matrix(Y)
    grow = [ctx.rf(m + d, l) for l in range(n)]
    growf = np.array([float(g) for g in grow])
    mag_x = (Xf @ Hf @ Xf.T) * np.outer(growf, growf) * float(scale * W)
    mag_y = (Yf @ Hf @ Yf.T) * np.outer(growf, growf) * float(scale * W) * (m - 1) / m**2

    values = np.zeros((n, n))
    magnitude = np.zeros((n, n))
    noise_sign = -1 if flip_noise_sign else 1
    for i in range(n):
        r = i + m
        for j in range(i + 1):
            l = j + m
            bmr, bml = tab.coef(m, r), tab.coef(m, l)
            terms = [scale * W * bml * bmr * beta(r, l, 2 * m)]
            for q in range(m, max(r, l) + 1):
                wq = scale * (q + d) * tab.p[q - m]
                alt = -1 if (m + q + 1) % 2 else 1
                x = bml * tab.coef(q, r) + bmr * tab.coef(q, l)
                if x:
                    terms.append(wq * alt * x * beta(r, l, q + m))
                x = bml * tab.coef(q + 1, r) + bmr * tab.coef(q + 1, l)
                if x:
                    terms.append(wq * alt * x * beta(r, l, q + m + 1))
                x = tab.coef(q, l) * tab.coef(q, r)
                if x:
                    terms.append(wq * m * x * beta(r, l, 2 * q))
                x = tab.coef(q, l) * tab.coef(q + 1, r) + tab.coef(q, r) * tab.coef(q + 1, l)
                if x:
                    terms.append(wq * m * x * beta(r, l, 2 * q + 1))
                x = tab.coef(q + 1, l) * tab.coef(q + 1, r)
                if x:
                    terms.append(wq * m * x * beta(r, l, 2 * q + 2))
            if (r + l) % 2:
                terms = [-t for t in terms]
            pre = scale * W * grow[i] * grow[j]
            sx, _ = _split_sum(ctx, [X[j][t] * XH[i][t] for t in range(j + 1)])
            terms.append(-noise_sign * pre * sx)
            if m > 1:
                sy, _ = _split_sum(ctx, [Y[j][t] * YH[i][t] for t in range(j + 1)])
                terms.append(-pre * (m - 1) / m**2 * sy)
            v, biggest = _split_sum(ctx, terms)
            mag = max(float(biggest), mag_x[i, j], mag_y[i, j])
            values[i, j] = values[j, i] = _snap(v, mag, tab.dps)
            magnitude[i, j] = magnitude[j, i] = mag
    return values, magnitude


@lru_cache(maxsize=64)
def _closed_form(params: ModelParams, kmax: int, scaling: str, flip: bool) -> np.ndarray:
    values, _ = _closed_form_blocks(_tables(params, kmax), kmax, scaling, flip)
    return values


def limit_covariance_closed_form(params: ModelParams, kmax: int = DEFAULT_KMAX,
                                 scaling: str = "arrival", *,
                                 flip_noise_sign: bool = False) -> CovarianceMatrix:
    """Limiting fluctuation covariance from the explicit Gamma-function formula.

    ``flip_noise_sign`` negates one block of the formula; it exists so the
    verification suite can show that the cross-path check catches a wrong sign.
    """
    _check_scaling(scaling)
    _check_degree(params, kmax, "kmax")
    values = _closed_form(params, kmax, scaling, bool(flip_noise_sign)).copy()
    return CovarianceMatrix(params.m, kmax, values, "closed_form", scaling)


def limit_covariance(params: ModelParams, r: int, l: int, scaling: str = "arrival") -> float:
    """Single entry of the closed-form limiting covariance."""
    _check_degree(params, r, "r")
    _check_degree(params, l, "l")
    kmax = max(DEFAULT_KMAX, r, l)
    return limit_covariance_closed_form(params, kmax, scaling).entry(r, l)


def relative_difference(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Entrywise ``|a - b| / max(|a|, |b|)``, with 0 where both vanish."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = np.maximum(np.abs(a), np.abs(b))
    out = np.zeros(np.broadcast(a, b).shape)
    nz = scale > 0
    out[nz] = np.abs(a - b)[nz] / scale[nz]
    return out
