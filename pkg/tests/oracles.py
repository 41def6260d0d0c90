"""Independent reference implementations used only by the tests."""
from fractions import Fraction
from math import comb, factorial

import mpmath as mp
import numpy as np
from scipy import integrate


def log_partition_mp(theta, dps=50):
    with mp.workdps(dps):
        t = mp.mpf(theta)
        if t == 0:
            return 0.0
        return float(mp.log(mp.expm1(t) / t))


def bprime_mp(theta, dps=50):
    with mp.workdps(dps):
        t = mp.mpf(theta)
        if t == 0:
            return 0.5
        return float(1 / (1 - mp.exp(-t)) - 1 / t)


def bdoubleprime_mp(theta, dps=50):
    with mp.workdps(dps):
        t = mp.mpf(theta)
        if t == 0:
            return 1.0 / 12
        return float(1 / t ** 2 - 1 / (4 * mp.sinh(t / 2) ** 2))


def h_exact(y: Fraction, lam: int) -> Fraction:
    """Density of the mean of ``lam`` uniforms at rational ``y``, exactly."""
    x = lam * y
    if x < 0 or x > lam:
        return Fraction(0)
    if lam == 1:
        return Fraction(1)
    total = Fraction(0)
    k = 0
    while k <= lam and k <= x:
        total += (-1) ** k * comb(lam, k) * (x - k) ** (lam - 1)
        k += 1
    return lam * total / factorial(lam - 1)


def cobin_cdf_quad(z, theta, lam, logpdf):
    pts = [k / lam for k in range(1, lam) if k / lam < z]
    return integrate.quad(lambda y: np.exp(logpdf(y)), 0, z, points=pts or None,
                          epsabs=1e-15, epsrel=1e-13, limit=400)[0]


def gauss_rule(a, b, breaks=(), panels=64, m=30):
    """Nodes and weights of a composite Gauss-Legendre rule on [a, b] split at ``breaks``."""
    edges = np.unique(np.concatenate([np.linspace(a, b, panels + 1),
                                      [x for x in breaks if a < x < b]]))
    x, w = np.polynomial.legendre.leggauss(m)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = (lo + hi) / 2 + (hi - lo) / 2 * x[None, :]
    return nodes.ravel(), (w[None, :] * (hi - lo) / 2).ravel()


def composite_gauss(f, a, b, breaks=(), panels=64, m=30):
    """Vectorized composite Gauss-Legendre rule on [a, b] split at ``breaks``."""
    nodes, weights = gauss_rule(a, b, breaks, panels, m)
    return float(np.sum(f(nodes) * weights))


def farey_points(order):
    return sorted({k / l for l in range(2, order + 1) for k in range(1, l)})
