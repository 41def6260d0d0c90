import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cobin.dist import (CobinParams, MicobinParams, NumericalInstabilityError, bdoubleprime,
                        bprime, cobin_cdf, cobin_log_density, cobin_quantile, cobin_rvs,
                        cobin_sample, cobit_link, cumulant, irwin_hall_scaled_log_density,
                        log_h_table, log_partition, micobin_cdf, micobin_log_density,
                        micobin_rvs, micobin_truncation_remainder, micobin_weights,
                        variance_function)

from oracles import (bdoubleprime_mp, bprime_mp, cobin_cdf_quad, composite_gauss, farey_points,
                     h_exact, log_partition_mp)

THETAS = np.concatenate([np.linspace(-40, 40, 81), [1e-12, -1e-9, 1e-6, 1e-4, 0.0199, 0.1999,
                                                    0.2001, -0.2, 3e-3, 0.0]])


# --- cumulant --------------------------------------------------------------

@pytest.mark.parametrize("theta", THETAS)
def test_cumulant_matches_high_precision(theta):
    b, bp, bpp = cumulant(theta)
    assert b == pytest.approx(log_partition_mp(theta), rel=1e-14, abs=1e-15)
    assert bp == pytest.approx(bprime_mp(theta), rel=1e-14)
    assert bpp == pytest.approx(bdoubleprime_mp(theta), rel=1e-12)


def test_cumulant_known_values():
    assert bprime(0.0) == 0.5
    assert bdoubleprime(0.0) == pytest.approx(1 / 12, rel=1e-15)
    assert log_partition(0.0) == 0.0
    assert bprime(800.0) == pytest.approx(1 - 1 / 800, rel=1e-15)
    assert bprime(-800.0) == pytest.approx(1 / 800, rel=1e-15)


def test_cumulant_symmetry():
    t = np.linspace(-30, 30, 121)
    np.testing.assert_allclose(bprime(t) + bprime(-t), 1.0, atol=1e-15)
    np.testing.assert_allclose(log_partition(t) - log_partition(-t), t, atol=1e-13)


@given(st.floats(min_value=1e-6, max_value=1 - 1e-6))
@settings(max_examples=200, deadline=None)
def test_cobit_link_inverts_mean(mu):
    theta = cobit_link(mu)
    assert bprime(theta) == pytest.approx(mu, rel=1e-11, abs=1e-13)


def test_cobit_link_boundaries_and_variance():
    assert cobit_link(0.5) == 0.0
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            cobit_link(bad)
    mu = np.linspace(0.01, 0.99, 50)
    np.testing.assert_allclose(variance_function(mu), bdoubleprime(cobit_link(mu)), rtol=1e-12)


# --- base measure ----------------------------------------------------------

@pytest.mark.parametrize("lam", [1, 2, 3, 5, 12, 30, 70, 150])
def test_h_matches_exact_rational(lam):
    ys = [Fraction(k, 97) for k in (0, 1, 13, 40, 48, 49, 60, 90, 96, 97)]
    got = irwin_hall_scaled_log_density(np.array([float(y) for y in ys]), lam)
    for y, g in zip(ys, got):
        ex = h_exact(y, lam)
        if ex == 0:
            assert g == -np.inf
        else:
            assert math.exp(g) == pytest.approx(float(ex), rel=1e-11)


def test_h_series_raises_when_cancellation_exceeds_budget():
    with pytest.raises(NumericalInstabilityError) as info:
        irwin_hall_scaled_log_density(0.5, 80, method="series", max_lost_digits=3)
    assert info.value.lost_digits > 3


def test_h_methods_agree_and_table():
    y = np.linspace(0, 1, 41)
    for lam in (2, 7, 20):
        a = irwin_hall_scaled_log_density(y, lam, method="recursion")
        b = irwin_hall_scaled_log_density(y, lam, method="auto")
        fin = np.isfinite(a)
        np.testing.assert_array_equal(fin, np.isfinite(b))
        np.testing.assert_allclose(a[fin], b[fin], rtol=1e-11, atol=1e-12)
    T = log_h_table(y, 20)
    np.testing.assert_allclose(T[:, 6][np.isfinite(T[:, 6])],
                               irwin_hall_scaled_log_density(y, 7)[np.isfinite(T[:, 6])],
                               rtol=1e-11)


def test_h_outside_support():
    assert irwin_hall_scaled_log_density(-0.1, 3) == -np.inf
    assert irwin_hall_scaled_log_density(1.1, 3) == -np.inf


# --- cobin density, CDF, quantile, sampler --------------------------------

@pytest.mark.parametrize("lam", [1, 2, 5, 17, 70])
@pytest.mark.parametrize("theta", [-25.0, -3.0, 0.0, 0.7, 12.0])
def test_cobin_density_integrates_to_one(theta, lam):
    pts = [k / lam for k in range(1, lam)][:50]
    val = integrate.quad(lambda y: math.exp(cobin_log_density(y, theta, lam)), 0, 1,
                         points=pts or None, limit=500, epsabs=1e-14)[0]
    assert val == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("lam", [1, 3, 9, 40])
@pytest.mark.parametrize("theta", [-12.0, -1.0, 0.0, 2.5, 30.0])
def test_cobin_cdf_matches_quadrature(theta, lam):
    z = np.array([0.05, 0.3, 0.5, 0.77, 0.96])
    got = cobin_cdf(z, theta, lam)
    ref = [cobin_cdf_quad(zi, theta, lam, lambda y: cobin_log_density(y, theta, lam)) for zi in z]
    np.testing.assert_allclose(got, ref, atol=1e-10)


def test_cobin_symmetry_identity():
    z = np.linspace(0, 1, 21)
    for theta in (-7.0, -0.3, 0.0, 4.0):
        for lam in (1, 4, 25):
            np.testing.assert_allclose(cobin_cdf(z, theta, lam), 1 - cobin_cdf(1 - z, -theta, lam),
                                       atol=1e-12)
            np.testing.assert_allclose(cobin_log_density(z[1:-1], theta, lam),
                                       cobin_log_density(1 - z[1:-1], -theta, lam), atol=1e-12)


def test_cobin_cdf_endpoints():
    assert cobin_cdf(0.0, 1.3, 4) == 0.0
    assert cobin_cdf(1.0, 1.3, 4) == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("lam", [1, 4])
def test_cobin_quantile_roundtrip(lam):
    u = np.array([0.01, 0.2, 0.5, 0.9, 0.999])
    z = cobin_quantile(u, -2.0, lam)
    np.testing.assert_allclose(cobin_cdf(z, -2.0, lam), u, atol=1e-9)


@pytest.mark.parametrize("theta,lam", [(0.0, 1), (-4.0, 1), (3.0, 3), (-1.5, 8)])
def test_cobin_sampler_ks(theta, lam, rng):
    x = cobin_rvs(theta, lam, rng, size=20_000)
    assert stats.kstest(x, lambda z: cobin_cdf(z, theta, lam)).pvalue > 1e-3
    p = CobinParams(theta, lam)
    se = math.sqrt(p.var / x.size)
    assert abs(x.mean() - p.mean) < 5 * se


def test_params_objects():
    p = CobinParams(1.0, 3)
    assert p.var == pytest.approx(bdoubleprime(1.0) / 3)
    assert cobin_log_density(0.4, p) == cobin_log_density(0.4, 1.0, 3)
    assert np.shape(cobin_sample(p, np.random.default_rng(0), 4)) == (4,)
    with pytest.raises(ValueError):
        CobinParams(0.0, 0)
    with pytest.raises(ValueError):
        CobinParams(0.0, 1.5)
    with pytest.raises(ValueError):
        MicobinParams(0.0, 1.0)


# --- micobin ---------------------------------------------------------------

def test_micobin_weights_sum_with_remainder():
    for psi in (0.05, 0.3, 0.5, 0.9):
        w = micobin_weights(psi, 70)
        assert w.sum() + micobin_truncation_remainder(psi, 70) == pytest.approx(1.0, abs=1e-13)


@pytest.mark.parametrize("psi", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("theta", [-6.0, 0.0, 2.0])
def test_micobin_density_integrates(theta, psi):
    f = lambda y: np.exp(micobin_log_density(y, theta, psi))  # noqa: E731
    val = composite_gauss(f, 0.0, 1.0, farey_points(12))
    assert val == pytest.approx(1 - micobin_truncation_remainder(psi), abs=1e-9)


def test_micobin_boundary_closed_forms():
    for theta in (-3.0, 0.5, 4.0):
        for psi in (0.2, 0.6):
            d0 = math.exp(micobin_log_density(0.0, theta, psi))
            d1 = math.exp(micobin_log_density(1.0, theta, psi))
            assert d0 == pytest.approx(psi ** 2 * theta / math.expm1(theta), rel=1e-12)
            assert d1 == pytest.approx(psi ** 2 * theta * math.exp(theta) / math.expm1(theta),
                                       rel=1e-12)


def test_micobin_cdf_and_sampler(rng):
    theta, psi = 1.2, 0.4
    f = lambda y: np.exp(micobin_log_density(y, theta, psi))  # noqa: E731
    norm = micobin_weights(psi).sum()
    for z in (0.1, 0.45, 0.8):
        ref = composite_gauss(f, 0.0, z, farey_points(12)) / norm
        assert micobin_cdf(z, theta, psi) == pytest.approx(ref, abs=1e-9)
    x = micobin_rvs(theta, psi, rng, size=20_000)
    p = MicobinParams(theta, psi)
    assert abs(x.mean() - p.mean) < 5 * math.sqrt(p.var / x.size)
    grid = np.linspace(0.05, 0.95, 7)
    emp = (x[:, None] <= grid[None, :]).mean(axis=0)
    # pointwise binomial bands on a few CDF values
    F = micobin_cdf(grid, theta, psi)
    assert np.all(np.abs(emp - F) < 5 * np.sqrt(F * (1 - F) / x.size))
