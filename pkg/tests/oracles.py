"""Independent reference implementations used only by the tests.

Everything here uses exact rational arithmetic (``fractions.Fraction``) and
direct summation, and shares no code with the package.
"""

from __future__ import annotations

import math
from collections import defaultdict
from fractions import Fraction as Fr


def rising(x, n):
    out = Fr(1)
    for j in range(n):
        out *= x + j
    return out


def pmf(m, d, k):
    d = Fr(d)
    c = d / m
    return (2 + c) * rising(m + d, k - m) / rising(m + 2 + d + c, k - m + 1)


def coef(d, j, k):
    if j > k:
        return Fr(0)
    out = Fr(1)
    for t in range(j, k):
        out *= (t + Fr(d)) / (t - k)
    return out


def kernel(m, d, r, l):
    """Increment covariance kernel by direct summation; the tail uses 1 - partial mass."""
    d = Fr(d)
    W = 2 * m + d
    total = Fr(0)
    mass = Fr(0)
    for h in range(m, max(r, l) + 2):
        w = (h + d) * pmf(m, d, h) / W
        dr = coef(d, h + 1, r) - coef(d, h, r)
        dl = coef(d, h + 1, l) - coef(d, h, l)
        total += w * ((coef(d, m, r) + dr) * (coef(d, m, l) + dl) + (m - 1) * dr * dl)
        mass += w
    total += (1 - mass) * coef(d, m, r) * coef(d, m, l)

    def u(x):
        return (x + d) / W * sum(coef(d, t, x) * pmf(m, d, t) for t in range(m, x + 1))

    return total - (coef(d, m, r) - u(r)) * (coef(d, m, l) - u(l)) - (m - 1) * u(r) * u(l)


def rate(m, d, scaling):
    """``(kappa, scale)``: ``R_Y = scale (2m+d) a / (r + l + kappa)``."""
    d = Fr(d)
    if scaling == "arrival":
        return 2 + 2 * d + d / m, Fr(1, m)
    return 2 * m + 3 * d, Fr(1)


def mixed(m, d, r, l, scaling):
    kappa, scale = rate(m, d, scaling)
    return scale * (2 * m + Fr(d)) * kernel(m, d, r, l) / (r + l + kappa)


def covariance_transform(m, d, kmax, scaling):
    ks = range(m, kmax + 1)
    ry = {(r, l): mixed(m, d, r, l, scaling) for r in ks for l in ks}

    def dm(r, l):
        return (-1) ** (r - l) * coef(d, l, r) if l <= r else Fr(0)

    return {(r, l): sum(dm(r, a) * ry[a, b] * dm(l, b) for a in ks for b in ks)
            for r in ks for l in ks}


def covariance_closed(m, d, r, l, scaling):
    """Closed-form limit covariance, summed term by term."""
    d = Fr(d)
    c = d / m
    W = 2 * m + d
    kappa, scale = rate(m, d, scaling)
    L = r + l

    def beta(a):
        return math.factorial(L - a) / rising(kappa + a, L - a + 1)

    def b(j, k):
        return coef(d, j, k)

    tot = W * b(m, l) * b(m, r) * beta(2 * m)
    for q in range(m, max(r, l) + 1):
        wq = (q + d) * pmf(m, d, q)
        sg = (-1) ** (m + q + 1)
        t = Fr(0)
        x = b(m, l) * b(q, r) + b(m, r) * b(q, l)
        if x:
            t += sg * x * beta(q + m)
        x = b(m, l) * b(q + 1, r) + b(m, r) * b(q + 1, l)
        if x:
            t += sg * x * beta(q + m + 1)
        x = b(q, l) * b(q, r)
        if x:
            t += m * x * beta(2 * q)
        x = b(q, l) * b(q + 1, r) + b(q, r) * b(q + 1, l)
        if x:
            t += m * x * beta(2 * q + 1)
        x = b(q + 1, l) * b(q + 1, r)
        if x:
            t += m * x * beta(2 * q + 2)
        tot += wq * t
    first = (-1) ** L * scale * tot

    s2 = Fr(0)
    s3 = Fr(0)
    for t1 in range(m, l + 1):
        for t2 in range(m, r + 1):
            den = (math.factorial(t1 - m) * math.factorial(t2 - m) * math.factorial(l - t1)
                   * math.factorial(r - t2) * (t1 + 2 + d + c) * (t2 + 2 + d + c)
                   * (t1 + t2 + kappa))
            sg = (-1) ** (t1 + t2)
            s2 += sg * (t1 + 2 + d - Fr(t1, m)) * (t2 + 2 + d - Fr(t2, m)) / den
            s3 += sg * (d + t1) * (d + t2) / den
    gg = rising(m + d, l - m) * rising(m + d, r - m)
    return first - scale * W * gg * s2 - scale * W * (m - 1) * gg / m**2 * s3


def kernel_bruteforce(m, d, r, l, h_max=100_000):
    """Float evaluation with the h-sum truncated at ``h_max`` and no closed forms."""
    d = float(d)
    W = 2 * m + d
    c = d / m

    def b(j, k):
        if j > k:
            return 0.0
        v = 1.0
        for t in range(j, k):
            v *= (t + d) / (t - k)
        return v

    bmr, bml = b(m, r), b(m, l)
    total = 0.0
    p = (2 + c) / (m + 2 + d + c)
    ps = {}
    for h in range(m, h_max + 1):
        ps[h] = p
        w = (h + d) * p / W
        dr = b(h + 1, r) - b(h, r) if h <= r else 0.0
        dl = b(h + 1, l) - b(h, l) if h <= l else 0.0
        total += w * ((bmr + dr) * (bml + dl) + (m - 1) * dr * dl)
        p *= (h + d) / (h + 3 + d + c)

    def u(x):
        return (x + d) / W * sum(b(t, x) * ps[t] for t in range(m, x + 1))

    return total - (bmr - u(r)) * (bml - u(l)) - (m - 1) * u(r) * u(l)


def enumerate_positions(m, d, s_final):
    """Exact law of the degree sequence at every position up to ``(s_final, 0)``.

    Returns ``{(s, i): {degrees: probability}}`` where ``degrees`` lists the
    degrees of vertices ``0..s-1`` (the arriving vertex is left out).
    """
    d = Fr(d)
    law = {(m, m): Fr(1)}
    out = {(2, 0): dict(law)}
    s, i = 2, 0
    while s < s_final:
        nxt = defaultdict(Fr)
        for degs, p in law.items():
            weight = sum(k + d for k in degs)
            for v, k in enumerate(degs):
                q = p * (k + d) / weight
                new = list(degs)
                new[v] += 1
                if i + 1 == m:
                    new.append(m)
                nxt[tuple(new)] += q
        law = dict(nxt)
        i += 1
        if i == m:
            s, i = s + 1, 0
        out[(s, i)] = law
    return out


def count_vector(degs, kmax):
    out = [0] * (kmax + 1)
    for k in degs:
        if k <= kmax:
            out[k] += 1
    return out


def count_moments(law, m, kmax):
    """Exact mean and covariance of ``N_m..N_kmax`` under a law from :func:`enumerate_positions`."""
    n = kmax - m + 1
    mean = [Fr(0)] * n
    second = [[Fr(0)] * n for _ in range(n)]
    for degs, p in law.items():
        c = count_vector(degs, kmax)[m:]
        for a in range(n):
            mean[a] += p * c[a]
            for b in range(n):
                second[a][b] += p * c[a] * c[b]
    cov = [[second[a][b] - mean[a] * mean[b] for b in range(n)] for a in range(n)]
    return mean, cov
