import math
from fractions import Fraction as Fr

import numpy as np
import pytest
from scipy.special import gammaln

import oracles
from pa_clt.asymptotics import (
    SignedLogValue,
    binomial_identity_residual,
    increment_kernel,
    limit_covariance,
    limit_covariance_closed_form,
    limit_covariance_via_transform,
    limiting_pmf,
    mixed_covariance,
    mixing_coefficient,
    relative_difference,
    transform_matrices,
    weighted_mass,
    working_digits,
)
from pa_clt.errors import ParameterError
from pa_clt.model import ModelParams

GRID = [ModelParams(m, f * m) for m in (1, 2, 3) for f in (-0.9, 0.0, 1.0 / m, 5.0 / m)]

# Exact values from the rational oracle in tests/oracles.py (both formula paths agree).
FROZEN = [
    (1, Fr(0), "edge", 1, 1, Fr(1, 9)),
    (1, Fr(0), "edge", 2, 1, Fr(-4, 45)),
    (1, Fr(0), "edge", 2, 2, Fr(23, 180)),
    (1, Fr(0), "edge", 3, 1, Fr(-1, 45)),
    (1, Fr(1), "edge", 2, 2, Fr(76, 525)),
    (1, Fr(1), "edge", 3, 3, Fr(939, 13475)),
    (2, Fr(0), "arrival", 5, 5, Fr(2026, 40425)),
    (2, Fr(0), "arrival", 3, 5, Fr(-1, 75)),
    (2, Fr(0), "arrival", 2, 2, Fr(1, 8)),
    (2, Fr(0), "edge", 5, 5, Fr(512431, 6131125)),
    (2, Fr(0), "edge", 3, 5, Fr(-1187, 57750)),
    (3, Fr(-3, 2), "arrival", 3, 3, Fr(5, 36)),
    (3, Fr(-3, 2), "arrival", 4, 3, Fr(-95, 1056)),
]


def test_pmf_small_values():
    params = ModelParams(1, 0.0)
    for k, want in [(1, 2 / 3), (2, 1 / 6), (3, 1 / 15), (7, 4 / (7 * 8 * 9))]:
        assert limiting_pmf(params, k) == pytest.approx(want, rel=1e-13)


@pytest.mark.parametrize("params", GRID)
def test_pmf_first_value_and_shape(params):
    m, d = params.m, params.delta
    c = d / m
    assert limiting_pmf(params, m) == pytest.approx((2 + c) / (m + 2 + d + c), rel=1e-13)
    ps = [limiting_pmf(params, k) for k in range(m, m + 60)]
    assert all(0 < p < 1 for p in ps)
    assert all(a > b for a, b in zip(ps, ps[1:]))
    for k in (m, m + 3, m + 9):
        assert limiting_pmf(params, k) == pytest.approx(float(oracles.pmf(m, Fr(d), k)), rel=1e-12)


def test_pmf_partial_sum_and_domain():
    params = ModelParams(1, 0.0)
    assert math.fsum(limiting_pmf(params, k) for k in range(1, 10_001)) >= 0.999
    with pytest.raises(ParameterError):
        limiting_pmf(ModelParams(2, 0.0), 1)


def _log_pmf(params, ks):
    m, d = params.m, params.delta
    c = d / m
    return (np.log(2 + c) + gammaln(ks + d) + gammaln(m + 2 + d + c)
            - gammaln(m + d) - gammaln(ks + 3 + d + c))


@pytest.mark.parametrize("m,delta,want", [(1, 0.0, 2.0), (2, -1.0, 3.0), (3, 10.0, 16.0)])
def test_weighted_mass_by_partial_sums(m, delta, want):
    params = ModelParams(m, delta)
    assert weighted_mass(params) == want
    top = 10**6
    ks = np.arange(m, top + 1, dtype=float)
    partial = math.fsum((ks + delta) * np.exp(_log_pmf(params, ks)))
    # (k + delta) p_k ~ A k^-(2 + c); add the leading-order tail beyond `top`
    c = delta / m
    amp = (2 + c) * math.exp(math.lgamma(m + 2 + delta + c) - math.lgamma(m + delta))
    tail = amp * (top + 0.5) ** (-(1 + c)) / (1 + c)
    assert partial + tail == pytest.approx(want, abs=1e-6)


def test_mixing_coefficient_examples():
    params = ModelParams(1, 0.0)
    assert mixing_coefficient(params, 1, 2).value == pytest.approx(-1)
    assert mixing_coefficient(params, 1, 3).value == pytest.approx(1)
    assert mixing_coefficient(params, 2, 3).value == pytest.approx(-2)
    assert mixing_coefficient(params, 4, 3).sign == 0
    for k in (1, 5, 40):
        assert mixing_coefficient(ModelParams(1, 0.7), k, k) == SignedLogValue(1, 0.0)


@pytest.mark.parametrize("params", GRID)
def test_mixing_ratio_and_oracle(params):
    m, d = params.m, params.delta
    for r in (m + 1, m + 6, m + 25):
        for j in range(m, r):
            ratio = mixing_coefficient(params, j + 1, r).value / mixing_coefficient(params, j, r).value
            assert ratio == pytest.approx((j - r) / (j + d), rel=1e-12)
    assert mixing_coefficient(params, m, m + 7).value == pytest.approx(
        float(oracles.coef(Fr(d), m, m + 7)), rel=1e-12)


def test_mixing_coefficient_beyond_double_range():
    v = mixing_coefficient(ModelParams(1, 500.0), 1, 1000)
    want = math.lgamma(1500) - math.lgamma(1000) - math.lgamma(501)
    assert want > math.log(1e308)
    assert v.sign == -1
    assert v.log_magnitude == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("params", GRID)
def test_pmf_annihilated_by_mixing_rows(params):
    m, d = params.m, params.delta
    p = {k: limiting_pmf(params, k) for k in range(m, 32)}
    p[m - 1] = 0.0
    for r in range(m, 31):
        terms = [mixing_coefficient(params, j, r).value * ((r - j) * p[j] + (j - 1 + d) * p[j - 1])
                 for j in range(m, r + 1)]
        assert abs(math.fsum(terms)) <= 1e-10 * max(1.0, sum(abs(t) for t in terms))


@pytest.mark.parametrize("m,delta", [(1, Fr(0)), (2, Fr(-1, 2)), (3, Fr(7, 3))])
def test_weighted_partial_sum_closed_form(m, delta):
    c = delta / m
    for r in range(m, m + 12):
        direct = oracles.coef(delta, m, r) - (r + delta) / (2 * m + delta) * sum(
            oracles.coef(delta, j, r) * oracles.pmf(m, delta, j) for j in range(m, r + 1))
        closed = oracles.coef(delta, m, r) * (r + 2 + delta - Fr(r, m)) / (r + 2 + delta + c)
        assert direct == closed


@pytest.mark.parametrize("m,delta", [(1, Fr(0)), (2, Fr(-1)), (3, Fr(5, 2)), (1, Fr(-9, 10))])
def test_increment_kernel_matches_rational_oracle(m, delta):
    params = ModelParams(m, float(delta))
    for r in range(m, m + 6):
        for l in range(m, r + 1):
            want = float(oracles.kernel(m, delta, r, l))
            assert increment_kernel(params, r, l) == pytest.approx(want, rel=1e-12, abs=1e-15)
            assert increment_kernel(params, l, r) == increment_kernel(params, r, l)


@pytest.mark.parametrize("m,delta", [(1, 5.0), (2, 10.0)])
def test_increment_kernel_matches_bruteforce_sum(m, delta):
    params = ModelParams(m, delta)
    for r, l in [(m, m), (m + 2, m + 1), (m + 4, m + 4)]:
        want = oracles.kernel_bruteforce(m, delta, r, l)
        assert increment_kernel(params, r, l) == pytest.approx(want, rel=1e-8)


@pytest.mark.parametrize("params", GRID)
def test_increment_kernel_diagonal_positive(params):
    assert all(increment_kernel(params, r, r) > 0 for r in range(params.m, 31))


def test_mixed_covariance_rate_factor():
    for params in GRID:
        m, d = params.m, params.delta
        a = increment_kernel(params, m, m)
        edge = mixed_covariance(params, m, m, scaling="edge")
        assert edge == pytest.approx((2 * m + d) / (4 * m + 3 * d) * a, rel=1e-12)
        if m == 1:
            assert mixed_covariance(params, 1, 1) == pytest.approx(edge, rel=1e-12)
        ratios = [mixed_covariance(params, m, l, "edge") / increment_kernel(params, m, l)
                  for l in range(m, m + 8) if increment_kernel(params, m, l) != 0]
        assert all(x > y for x, y in zip(ratios, ratios[1:]))
    with pytest.raises(ParameterError):
        mixed_covariance(ModelParams(1, 0.0), 1, 1, scaling="linear")


def test_mixed_covariance_matches_oracle():
    for m, delta in [(1, Fr(1)), (2, Fr(0)), (3, Fr(-3, 2))]:
        params = ModelParams(m, float(delta))
        for scaling in ("arrival", "edge"):
            for r, l in [(m, m), (m + 3, m + 1)]:
                want = float(oracles.mixed(m, delta, r, l, scaling))
                assert mixed_covariance(params, r, l, scaling) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("m,delta,scaling,r,l,want", FROZEN)
def test_limit_covariance_frozen_values(m, delta, scaling, r, l, want):
    params = ModelParams(m, float(delta))
    closed = limit_covariance_closed_form(params, 10, scaling)
    transform = limit_covariance_via_transform(params, 10, scaling)
    assert closed.entry(r, l) == pytest.approx(float(want), rel=1e-12)
    assert transform.entry(r, l) == pytest.approx(float(want), rel=1e-12)
    assert limit_covariance(params, l, r, scaling) == pytest.approx(float(want), rel=1e-12)


@pytest.mark.parametrize("m,delta", [(1, Fr(1, 2)), (2, Fr(-3, 2))])
def test_limit_covariance_matches_rational_paths(m, delta):
    params = ModelParams(m, float(delta))
    kmax = m + 4
    for scaling in ("arrival", "edge"):
        via = oracles.covariance_transform(m, delta, kmax, scaling)
        got = limit_covariance_closed_form(params, kmax, scaling)
        for r in range(m, kmax + 1):
            for l in range(m, r + 1):
                assert oracles.covariance_closed(m, delta, r, l, scaling) == via[r, l]
                assert got.entry(r, l) == pytest.approx(float(via[r, l]), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("params", [ModelParams(1, -0.9), ModelParams(2, 1.0), ModelParams(3, 15.0)])
def test_covariance_paths_agree_and_psd(params):
    closed = limit_covariance_closed_form(params, 20).values
    via = limit_covariance_via_transform(params, 20).values
    assert relative_difference(closed, via).max() <= 1e-8
    np.testing.assert_array_equal(closed, closed.T)
    assert (np.diag(closed) > 0).all()
    assert np.linalg.eigvalsh(closed).min() >= -1e-8 * np.trace(closed)


def test_enlarging_kmax_keeps_entries():
    params = ModelParams(2, 0.5)
    small = limit_covariance_via_transform(params, 12).values
    big = limit_covariance_via_transform(params, 25).values
    assert relative_difference(small, big[:11, :11]).max() <= 1e-12
    small = limit_covariance_closed_form(params, 12).values
    assert relative_difference(small, big[:11, :11]).max() <= 1e-12


def test_variance_curve_decreasing():
    cov = limit_covariance_closed_form(ModelParams(1, 1.0), 20)
    diag = [cov.entry(r, r) for r in range(2, 21)]
    assert all(a > b for a, b in zip(diag, diag[1:]))


def test_sign_flip_breaks_agreement():
    params = ModelParams(1, 0.0)
    good = limit_covariance_via_transform(params, 8).values
    bad = limit_covariance_closed_form(params, 8, flip_noise_sign=True).values
    assert relative_difference(good, bad).max() > 1e-3


@pytest.mark.parametrize("params", GRID)
def test_transform_matrices_invert(params):
    tm = transform_matrices(params, 30)
    assert tm.identity_residual() <= 1e-10
    np.testing.assert_array_equal(np.diag(tm.C), 1.0)
    np.testing.assert_array_equal(np.diag(tm.D), 1.0)
    assert np.abs(np.triu(tm.C, 1)).max() == 0.0
    # small blocks are well conditioned enough for a float product
    n = 8
    np.testing.assert_allclose(tm.C[:n, :n] @ tm.D[:n, :n], np.eye(n), atol=1e-9)


@pytest.mark.parametrize("params", GRID)
def test_binomial_identity(params):
    rng = np.random.default_rng(params.m)
    for _ in range(5):
        l = int(rng.integers(params.m, 25))
        r = int(rng.integers(l, 30))
        for x in (0, 1, 2, -1):
            assert binomial_identity_residual(params, r, l, x) <= 1e-12
    with pytest.raises(ParameterError):
        binomial_identity_residual(params, params.m, params.m + 1, 1)


def test_working_digits_grows_with_kmax():
    params = ModelParams(1, 0.0)
    assert working_digits(params, 10) < working_digits(params, 30)


def test_relative_difference():
    out = relative_difference(np.array([0.0, 1.0, -2.0]), np.array([0.0, 1.1, 2.0]))
    np.testing.assert_allclose(out, [0.0, 0.1 / 1.1, 2.0])
