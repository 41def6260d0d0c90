"""Cobin and micobin distributions.

The continuous binomial (cobin) family is the exponential dispersion model
generated by the uniform distribution on [0, 1]:

    p(y; theta, 1/lam) = h(y, lam) * exp(lam * (theta * y - B(theta)))

with cumulant ``B(theta) = log((e^theta - 1) / theta)`` and ``h`` the density
of the mean of ``lam`` i.i.d. uniforms (a scaled Irwin-Hall density).  The
micobin family mixes cobin over ``lam - 1 ~ NegBin(2, psi)``.

All functions broadcast over ``y``/``z``/``theta``; ``lam`` is a scalar
positive integer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import mpmath
import numpy as np
from scipy import special

__all__ = [
    "NumericalInstabilityError",
    "CobinParams",
    "MicobinParams",
    "CumulantTriple",
    "cumulant",
    "log_partition",
    "bprime",
    "bdoubleprime",
    "cobit_link",
    "variance_function",
    "irwin_hall_scaled_log_density",
    "log_h_table",
    "cobin_log_density",
    "cobin_cdf",
    "cobin_quantile",
    "cobin_sample",
    "cobin_rvs",
    "micobin_weights",
    "micobin_truncation_remainder",
    "micobin_log_density",
    "micobin_cdf",
    "micobin_sample",
    "micobin_rvs",
]

# |theta| below this uses the Taylor branch of the cumulant functions.
TAYLOR_THRESHOLD = 0.2
DEFAULT_TRUNC = 70

# Taylor coefficients (even/odd powers) of B, B', B'' about 0.
_B_COEF = np.array([1 / 24, -1 / 2880, 1 / 181440, -1 / 9676800, 1 / 479001600,
                    -691 / 15692092416000])  # theta^2, theta^4, ...
_BP_COEF = np.array([1 / 12, -1 / 720, 1 / 30240, -1 / 1209600, 1 / 47900160,
                     -691 / 1307674368000, 1 / 74724249600])  # theta^1, theta^3, ...
_BPP_COEF = np.array([1 / 12, -1 / 240, 1 / 6048, -1 / 172800, 1 / 5322240,
                      -691 / 118879488000, 1 / 5748019200])  # theta^0, theta^2, ...


class NumericalInstabilityError(ArithmeticError):
    """Raised when a signed sum cancels beyond the configured digit budget."""

    def __init__(self, message: str, lost_digits: float):
        super().__init__(message)
        self.lost_digits = lost_digits


class CumulantTriple(NamedTuple):
    b: np.ndarray | float
    bp: np.ndarray | float
    bpp: np.ndarray | float


@dataclass(frozen=True)
class CobinParams:
    """Natural parameter ``theta`` and integer inverse dispersion ``lam``."""

    theta: float
    lam: int = 1

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValueError(f"theta must be finite, got {self.theta}")
        if int(self.lam) != self.lam or self.lam < 1:
            raise ValueError(f"lam must be a positive integer, got {self.lam}")

    @property
    def mean(self) -> float:
        return float(bprime(self.theta))

    @property
    def var(self) -> float:
        return float(bdoubleprime(self.theta)) / self.lam

    def logpdf(self, y):
        return cobin_log_density(y, self.theta, self.lam)

    def cdf(self, z):
        return cobin_cdf(z, self.theta, self.lam)

    def sample(self, rng, size=None):
        return cobin_rvs(self.theta, self.lam, rng, size)


@dataclass(frozen=True)
class MicobinParams:
    """Natural parameter ``theta`` and mixing parameter ``psi`` in (0, 1)."""

    theta: float
    psi: float

    def __post_init__(self):
        if not math.isfinite(self.theta):
            raise ValueError(f"theta must be finite, got {self.theta}")
        if not 0.0 < self.psi < 1.0:
            raise ValueError(f"psi must lie in (0, 1), got {self.psi}")

    @property
    def mean(self) -> float:
        return float(bprime(self.theta))

    @property
    def var(self) -> float:
        return self.psi * float(bdoubleprime(self.theta))

    def logpdf(self, y, trunc: int = DEFAULT_TRUNC):
        return micobin_log_density(y, self.theta, self.psi, trunc)

    def cdf(self, z, trunc: int = DEFAULT_TRUNC):
        return micobin_cdf(z, self.theta, self.psi, trunc)

    def sample(self, rng, size=None):
        return micobin_rvs(self.theta, self.psi, rng, size)


# ---------------------------------------------------------------------------
# Cumulant function and link
# ---------------------------------------------------------------------------

def _scalar_or_array(x):
    return x.item() if isinstance(x, np.ndarray) and x.ndim == 0 else x


def log_partition(theta):
    """B(theta) = log((e^theta - 1) / theta)."""
    th = np.asarray(theta, dtype=float)
    out = np.empty_like(th)
    small = np.abs(th) < TAYLOR_THRESHOLD
    ts = th[small]
    t2 = ts * ts
    out[small] = ts / 2 + t2 * np.polynomial.polynomial.polyval(t2, _B_COEF)
    tl = th[~small]
    pos = tl > 0
    big = np.empty_like(tl)
    # e^t - 1 = e^t (1 - e^-t) for t > 0 avoids overflow
    big[pos] = tl[pos] + np.log(-np.expm1(-tl[pos])) - np.log(tl[pos])
    big[~pos] = np.log(-np.expm1(tl[~pos])) - np.log(-tl[~pos])
    out[~small] = big
    return _scalar_or_array(out)


def bprime(theta):
    """Mean function B'(theta) = e^theta / (e^theta - 1) - 1/theta (inverse cobit link)."""
    th = np.asarray(theta, dtype=float)
    out = np.empty_like(th)
    small = np.abs(th) < TAYLOR_THRESHOLD
    ts = th[small]
    out[small] = 0.5 + ts * np.polynomial.polynomial.polyval(ts * ts, _BP_COEF)
    tl = th[~small]
    # e^t/(e^t-1) = -1/expm1(-t)
    with np.errstate(over="ignore"):
        out[~small] = -1.0 / np.expm1(-tl) - 1.0 / tl
    return _scalar_or_array(out)


def bdoubleprime(theta):
    """Unit variance B''(theta) = 1/theta^2 - 1/(4 sinh^2(theta/2))."""
    th = np.asarray(theta, dtype=float)
    out = np.empty_like(th)
    small = np.abs(th) < TAYLOR_THRESHOLD
    ts = th[small]
    out[small] = np.polynomial.polynomial.polyval(ts * ts, _BPP_COEF)
    tl = th[~small]
    half = np.abs(tl) / 2
    # 1/(4 sinh^2(x)) = e^{-2x} / (1 - e^{-2x})^2, overflow-free for large x
    e = np.exp(-2 * half)
    out[~small] = 1.0 / (tl * tl) - e / np.expm1(-2 * half) ** 2
    return _scalar_or_array(out)


def cumulant(theta) -> CumulantTriple:
    """Return ``(B, B', B'')`` at ``theta``, continuous through zero."""
    return CumulantTriple(log_partition(theta), bprime(theta), bdoubleprime(theta))


def cobit_link(mu, tol: float = 1e-13, max_iter: int = 100):
    """Canonical (cobit) link: solve ``B'(theta) = mu`` for ``theta``.

    Safeguarded Newton started at ``3 * logit(mu)``.  The root is bracketed by
    ``[0, 1/(1-mu)]`` for ``mu > 1/2`` (mirror image below), because
    ``1 - 1/theta < B'(theta) < 1``; iterates leaving the bracket are replaced
    by bisection.
    """
    m = np.asarray(mu, dtype=float)
    if np.any(~((m > 0) & (m < 1))):
        raise ValueError("cobit_link requires mu in the open interval (0, 1)")
    flip = m < 0.5
    mm = np.where(flip, 1.0 - m, m)  # solve on the upper half, theta >= 0
    lo = np.zeros_like(mm)
    hi = 1.0 / (1.0 - mm)
    th = np.clip(3.0 * (np.log(mm) - np.log1p(-mm)), lo, hi)
    for _ in range(max_iter):
        f = bprime(th) - mm
        if np.all(np.abs(f) <= tol):
            break
        lo = np.where(f < 0, th, lo)
        hi = np.where(f > 0, th, hi)
        step = f / np.maximum(bdoubleprime(th), 1e-300)
        new = th - step
        bad = (new <= lo) | (new >= hi) | ~np.isfinite(new)
        th = np.where(bad, 0.5 * (lo + hi), new)
    th = np.where(mm == 0.5, 0.0, th)
    return _scalar_or_array(np.where(flip, -th, th))


def variance_function(mu):
    """V(mu) = B''((B')^{-1}(mu)); maximum 1/12 at mu = 1/2."""
    return bdoubleprime(cobit_link(mu))


# ---------------------------------------------------------------------------
# Base measure h(y, lam)
# ---------------------------------------------------------------------------

def _log_bspline_mid(x, lam: int):
    """log N_lam(x) by the positive-weight Cox-de Boor recursion.

    The recursion is linear in the previous level, so each row is rescaled by
    its maximum as it goes; this keeps very large ``lam`` away from underflow.
    """
    t = x[:, None] - np.arange(lam)[None, :]
    N = ((t >= 0) & (t < 1)).astype(float)
    log_scale = np.zeros(x.shape)
    shifted = np.empty_like(N)
    for j in range(2, lam + 1):
        shifted[:, :-1] = N[:, 1:]
        shifted[:, -1] = 0.0
        N = (t * N + (j - t) * shifted) / (j - 1)
        if j % 8 == 0:
            m = N.max(axis=1)
            N /= m[:, None]
            log_scale += np.log(m)
    return np.log(N[:, 0]) + log_scale


def _log_h_recursive(y, lam: int):
    y = np.asarray(y, dtype=float)
    out = np.full(y.shape, -np.inf)
    inside = (y >= 0) & (y <= 1)
    if lam == 1:
        out[inside] = 0.0
        return out
    x = lam * y
    log_norm = math.log(lam) - math.lgamma(lam)
    left = inside & (x > 0) & (x < 1)
    right = inside & (x > lam - 1) & (x < lam)
    mid = inside & (x >= 1) & (x <= lam - 1)
    # outside the middle knots only one polynomial piece is active
    out[left] = log_norm + (lam - 1) * np.log(x[left])
    out[right] = log_norm + (lam - 1) * np.log(lam - x[right])
    if np.any(mid):
        out[mid] = math.log(lam) + _log_bspline_mid(x[mid], lam)
    return out


def _log_h_series(y, lam: int, max_lost_digits: float):
    """Alternating-sum evaluation; returns (log h, lost digits) per element."""
    y = np.asarray(y, dtype=float)
    logh = np.full(y.shape, -np.inf)
    lost = np.zeros(y.shape)
    inside = (y >= 0) & (y <= 1)
    if lam == 1:
        logh[inside] = 0.0
        return logh, lost
    yy = y[inside]
    k = np.arange(lam + 1)
    base = lam * yy[:, None] - k[None, :]
    active = base > 0
    logc = special.gammaln(lam + 1) - special.gammaln(k + 1) - special.gammaln(lam - k + 1)
    with np.errstate(divide="ignore"):
        logt = np.where(active, logc[None, :] + (lam - 1) * np.log(np.where(active, base, 1.0)), -np.inf)
    top = np.max(logt, axis=1)
    top = np.where(np.isfinite(top), top, 0.0)
    scaled = np.exp(logt - top[:, None])
    signs = np.where(k % 2 == 0, 1.0, -1.0)
    total = np.sum(signs[None, :] * scaled, axis=1)  # numpy sums pairwise
    absolute = np.sum(scaled, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lost_in = np.where(total > 0, np.log10(absolute / total), np.inf)
        val = math.log(lam) - math.lgamma(lam) + top + np.log(np.where(total > 0, total, np.nan))
    no_mass = ~np.any(active, axis=1)
    val = np.where(no_mass, -np.inf, val)
    lost_in = np.where(no_mass, 0.0, lost_in)
    logh[inside] = val
    lost[inside] = lost_in
    return logh, lost


def irwin_hall_scaled_log_density(y, lam: int, method: str = "auto",
                                  max_lost_digits: float = 10.0,
                                  auto_switch_digits: float = 2.0):
    """Log of ``h(y, lam)``, the density of the mean of ``lam`` uniforms.

    Parameters
    ----------
    y : array_like
        Points in [0, 1]; values outside give ``-inf``.
    lam : int
        Number of uniforms averaged.
    method : {"auto", "series", "recursion"}
        ``"series"`` evaluates the closed-form alternating sum and raises
        :class:`NumericalInstabilityError` when it cancels by more than
        ``max_lost_digits`` significant digits (typically ``lam`` above ~40
        near ``y = 0.5``).  ``"recursion"`` uses the positive-weight B-spline
        recursion, which is stable for all ``lam``.  ``"auto"`` keeps series
        values that lost at most ``auto_switch_digits`` digits and recomputes
        the rest by the recursion, so its relative error stays near 1e-13.
    """
    lam = _check_lam(lam)
    if method == "recursion":
        return _scalar_or_array(_log_h_recursive(y, lam))
    if method not in ("auto", "series"):
        raise ValueError(f"unknown method {method!r}")
    logh, lost = _log_h_series(y, lam, max_lost_digits)
    if method == "series":
        if np.any(lost > max_lost_digits):
            worst = float(np.max(lost))
            raise NumericalInstabilityError(
                f"h(y, {lam}) alternating sum lost {worst:.1f} digits "
                f"(budget {max_lost_digits})", worst)
        return _scalar_or_array(logh)
    unstable = lost > auto_switch_digits
    if np.any(unstable):
        yy = np.asarray(y, dtype=float)
        logh = np.where(unstable, _log_h_recursive(np.broadcast_to(yy, logh.shape), lam), logh)
    return _scalar_or_array(logh)


def log_h_table(y, L: int):
    """Matrix ``T[i, l-1] = log h(y_i, l)`` for ``l = 1..L`` (stable recursion)."""
    y = np.asarray(y, dtype=float).ravel()
    table = np.empty((y.size, L))
    for lam in range(1, L + 1):
        table[:, lam - 1] = _log_h_recursive(y, lam)
    return table


def _unpack_cobin(theta, lam):
    if isinstance(theta, CobinParams):
        return theta.theta, theta.lam
    if lam is None:
        raise TypeError("pass a CobinParams or both theta and lam")
    return theta, lam


def _unpack_micobin(theta, psi):
    if isinstance(theta, MicobinParams):
        return theta.theta, theta.psi
    if psi is None:
        raise TypeError("pass a MicobinParams or both theta and psi")
    return theta, psi


def _check_lam(lam) -> int:
    if int(lam) != lam or lam < 1:
        raise ValueError(f"lam must be a positive integer, got {lam}")
    return int(lam)


# ---------------------------------------------------------------------------
# Cobin
# ---------------------------------------------------------------------------

def cobin_log_density(y, theta, lam: int | None = None):
    """Log density of cobin(theta, 1/lam) at ``y``; ``theta`` may be a CobinParams."""
    theta, lam = _unpack_cobin(theta, lam)
    lam = _check_lam(lam)
    y = np.asarray(y, dtype=float)
    theta = np.asarray(theta, dtype=float)
    logh = irwin_hall_scaled_log_density(y, lam)
    return _scalar_or_array(logh + lam * (theta * y - log_partition(theta)))


def _cobin_cdf_nonpos_float(z, a, lam):
    """F(z) for theta = -a <= 0 via the incomplete-gamma sum.

    Returns (value, lost_digits).  The sum is

        (1 - e^{-a})^{-lam} sum_k (-1)^k C(lam,k) e^{-a k} P(lam, a (lam z - k))

    with ``P`` the regularized lower incomplete gamma function; ``a = 0``
    reduces to the Irwin-Hall CDF.
    """
    k = np.arange(lam + 1)
    base = lam * z[:, None] - k[None, :]
    active = base > 0
    logc = special.gammaln(lam + 1) - special.gammaln(k + 1) - special.gammaln(lam - k + 1)
    zero = a < 1e-10
    aa = np.where(zero, 1.0, a)[:, None]
    w = aa * np.where(active, base, 0.0)
    P = special.gammainc(lam, w)
    with np.errstate(divide="ignore"):
        logP = np.log(P)
        # gammainc underflows for tiny w: fall back to the leading-order series
        tiny = active & (P < 1e-250)
        logP = np.where(tiny, lam * np.log(np.where(w > 0, w, 1.0)) - w
                        - special.gammaln(lam + 1) + np.log1p(w / (lam + 1)), logP)
        logfac = -lam * np.log(-np.expm1(-aa))
        logt_tilt = logc[None, :] - aa * k[None, :] + logP + logfac
        logt_flat = logc[None, :] + lam * np.log(np.where(active, base, 1.0)) - special.gammaln(lam + 1)
    logt = np.where(zero[:, None], logt_flat, logt_tilt)
    logt = np.where(active, logt, -np.inf)
    top = np.max(logt, axis=1)
    top = np.where(np.isfinite(top), top, 0.0)
    scaled = np.exp(logt - top[:, None])
    signs = np.where(k % 2 == 0, 1.0, -1.0)
    total = np.sum(signs * scaled, axis=1)
    absolute = np.sum(scaled, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.exp(top) * total
        lost = np.where(absolute > 0, np.log10(absolute / np.abs(total)), 0.0)
        # F <= 1, so the magnitude of the absolute sum bounds the cancellation
        # from below even when the float total is itself meaningless
        lost = np.maximum(lost, np.log10(absolute) + top / math.log(10))
    lost = np.where(np.isfinite(lost), lost, 400.0)
    return value, lost


def _cobin_cdf_nonpos_mp(z: float, a: float, lam: int, lost: float) -> float:
    with mpmath.workdps(int(20 + min(max(lost, 0), 300))):
        zz = mpmath.mpf(z)
        aa = mpmath.mpf(a)
        total = mpmath.mpf(0)
        for k in range(lam + 1):
            base = lam * zz - k
            if base <= 0:
                break
            if a == 0:
                term = base ** lam / mpmath.factorial(lam)
            else:
                term = mpmath.exp(-aa * k) * mpmath.gammainc(lam, 0, aa * base, regularized=True)
            total += (-1) ** k * mpmath.binomial(lam, k) * term
        if a != 0:
            total /= (-mpmath.expm1(-aa)) ** lam
        return float(total)


def cobin_cdf(z, theta, lam: int | None = None, max_lost_digits: float = 3.0):
    """CDF of cobin(theta, 1/lam).

    ``lam = 1`` uses ``(e^{theta z} - 1) / (e^theta - 1)``; ``lam >= 2`` the
    term-wise incomplete-gamma sum, with ``theta > 0`` handled through the
    reflection ``F(z; theta) = 1 - F(1 - z; -theta)``.  Elements whose float sum
    cancels by more than ``max_lost_digits`` digits are recomputed in extended
    precision.  ``theta`` may be a CobinParams.
    """
    theta, lam = _unpack_cobin(theta, lam)
    lam = _check_lam(lam)
    zb, thb = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(theta, dtype=float))
    if np.any((zb < 0) | (zb > 1)) or np.any(np.isnan(zb)):
        raise ValueError("cobin_cdf requires z in [0, 1]")
    zf = zb.ravel().copy()
    tf = thb.ravel().copy()
    flip = tf > 0
    zr = np.where(flip, 1.0 - zf, zf)
    a = np.abs(tf)
    if lam == 1:
        with np.errstate(invalid="ignore", divide="ignore"):
            # theta = -a <= 0: expm1(-a zr)/expm1(-a)
            val = np.where(a < 1e-12, zr, np.expm1(-a * zr) / np.expm1(-a))
    else:
        val, lost = _cobin_cdf_nonpos_float(zr, a, lam)
        for i in np.flatnonzero(lost > max_lost_digits):
            val[i] = _cobin_cdf_nonpos_mp(float(zr[i]), float(a[i]), lam, float(lost[i]))
    val = np.clip(val, 0.0, 1.0)
    val = np.where(flip, 1.0 - val, val)
    val = np.where(zf >= 1.0, 1.0, np.where(zf <= 0.0, 0.0, val))
    return _scalar_or_array(val.reshape(zb.shape))


def cobin_quantile(u, theta, lam: int | None = None, tol: float = 1e-10):
    """Inverse CDF.  Closed form for ``lam = 1``; bisection otherwise."""
    theta, lam = _unpack_cobin(theta, lam)
    lam = _check_lam(lam)
    ub, thb = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(theta, dtype=float))
    if np.any((ub < 0) | (ub > 1)):
        raise ValueError("cobin_quantile requires u in [0, 1]")
    if lam == 1:
        return _scalar_or_array(_cobin1_inverse_cdf(ub, thb))
    uf, tf = ub.ravel(), thb.ravel()
    lo = np.zeros_like(uf)
    hi = np.ones_like(uf)
    n_steps = int(math.ceil(math.log2(1.0 / tol))) + 1
    for _ in range(n_steps):
        mid = 0.5 * (lo + hi)
        below = cobin_cdf(mid, tf, lam) < uf
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return _scalar_or_array((0.5 * (lo + hi)).reshape(ub.shape))


def _cobin1_inverse_cdf(u, theta):
    """theta^{-1} log(u e^theta - u + 1), arranged to avoid overflow."""
    u = np.asarray(u, dtype=float)
    theta = np.asarray(theta, dtype=float)
    u, theta = np.broadcast_arrays(u, theta)
    out = np.array(u, dtype=float, copy=True)
    nz = np.abs(theta) >= 1e-12
    t = theta[nz]
    uu = u[nz]
    pos = t > 0
    res = np.empty_like(t)
    # t > 0: log(u e^t + 1 - u) = t + log(u + (1-u) e^-t)
    res[pos] = 1.0 + np.log(uu[pos] + (1 - uu[pos]) * np.exp(-t[pos])) / t[pos]
    res[~pos] = np.log1p(uu[~pos] * np.expm1(t[~pos])) / t[~pos]
    out[nz] = np.clip(res, 0.0, 1.0)
    return out


def cobin_sample(params: CobinParams, rng: np.random.Generator, size=None):
    """Draw from ``params``; see :func:`cobin_rvs` for array-valued ``theta``."""
    return cobin_rvs(params.theta, params.lam, rng, size)


def cobin_rvs(theta, lam: int, rng: np.random.Generator, size=None):
    """Draw cobin(theta, 1/lam) as the mean of ``lam`` continuous-Bernoulli draws."""
    lam = _check_lam(lam)
    theta = np.asarray(theta, dtype=float)
    shape = theta.shape if size is None else (size if isinstance(size, tuple) else (size,))
    u = rng.random(shape + (lam,))
    draws = _cobin1_inverse_cdf(u, np.broadcast_to(theta, shape)[..., None])
    return _scalar_or_array(draws.mean(axis=-1))


# ---------------------------------------------------------------------------
# Micobin
# ---------------------------------------------------------------------------

def micobin_weights(psi: float, trunc: int = DEFAULT_TRUNC):
    """Mixing weights ``l (1-psi)^(l-1) psi^2`` for ``l = 1..trunc``."""
    if not 0.0 < psi < 1.0:
        raise ValueError(f"psi must lie in (0, 1), got {psi}")
    lam = np.arange(1, trunc + 1)
    return np.exp(np.log(lam) + (lam - 1) * math.log1p(-psi) + 2 * math.log(psi))


def micobin_truncation_remainder(psi: float, trunc: int = DEFAULT_TRUNC) -> float:
    """Mixing mass dropped by truncating at ``trunc``: P(lam > trunc)."""
    # lam - 1 ~ NegBin(2, psi):  P(lam > T) = (1-psi)^T (1 + T psi)
    return float(math.exp(trunc * math.log1p(-psi)) * (1 + trunc * psi))


def micobin_log_density(y, theta, psi: float | None = None, trunc: int = DEFAULT_TRUNC):
    """Log density of micobin(theta, psi) truncated at ``trunc`` mixture components.

    The truncation is not renormalized, so boundary values equal the closed
    forms ``psi^2 theta / (e^theta - 1)`` and ``psi^2 theta e^theta / (e^theta - 1)``;
    the missing mass is :func:`micobin_truncation_remainder`.
    """
    theta, psi = _unpack_micobin(theta, psi)
    yb, thb = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(theta, dtype=float))
    yf, tf = yb.ravel(), thb.ravel()
    logw = np.log(micobin_weights(psi, trunc))
    lam = np.arange(1, trunc + 1)
    # the base measure table is the costly part; build it once per distinct y
    yu, inv = np.unique(yf, return_inverse=True)
    terms = (logw[None, :] + log_h_table(yu, trunc)[inv]
             + lam[None, :] * (tf * yf - log_partition(tf))[:, None])
    out = special.logsumexp(terms, axis=1)
    return _scalar_or_array(out.reshape(yb.shape))


def micobin_cdf(z, theta, psi: float | None = None, trunc: int = DEFAULT_TRUNC):
    """CDF of the micobin mixture truncated at ``trunc`` components.

    The truncated weights are renormalized so that the CDF runs from 0 to 1;
    it differs from the untruncated CDF by at most the truncation remainder.
    Components whose weight is below 1e-17 of the total are skipped.
    """
    theta, psi = _unpack_micobin(theta, psi)
    zb, thb = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(theta, dtype=float))
    w = micobin_weights(psi, trunc)
    w = w / w.sum()
    total = np.zeros(zb.shape)
    for lam in np.flatnonzero(w > 1e-17) + 1:
        total = total + w[lam - 1] * cobin_cdf(zb, thb, int(lam))
    return _scalar_or_array(np.clip(total, 0.0, 1.0))


def micobin_sample(params: MicobinParams, rng: np.random.Generator, size=None):
    """Draw from ``params``; see :func:`micobin_rvs` for array-valued ``theta``."""
    return micobin_rvs(params.theta, params.psi, rng, size)


def micobin_rvs(theta, psi: float, rng: np.random.Generator, size=None):
    """Exact draw: ``lam - 1 ~ NegBin(2, psi)`` then cobin(theta, 1/lam)."""
    if not 0.0 < psi < 1.0:
        raise ValueError(f"psi must lie in (0, 1), got {psi}")
    theta = np.asarray(theta, dtype=float)
    shape = theta.shape if size is None else (size if isinstance(size, tuple) else (size,))
    th = np.broadcast_to(theta, shape).ravel()
    lam = 1 + rng.negative_binomial(2, psi, size=th.size)
    out = np.empty(th.size)
    for l in np.unique(lam):
        idx = np.flatnonzero(lam == l)
        out[idx] = cobin_rvs(th[idx], int(l), rng)
    return _scalar_or_array(out.reshape(shape))
