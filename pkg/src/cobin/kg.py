"""Kolmogorov-Gamma random variables.

``KG(b, c)`` is the infinite convolution ``sum_k eps_k / (2 pi^2 k^2 + c^2/2)``
with ``eps_k ~ Gamma(b, 1)``.  It plays the role for the cobin likelihood that
the Polya-Gamma law plays for the logistic one: conditional on ``kappa``, the
likelihood of the linear predictor is Gaussian.

``KG(1, c)`` is sampled exactly by the alternating series method.  Its density
admits two alternating series, a left one (small ``x``) and a right one
(large ``x``); the proposal is their leading terms pieced together at a cutoff
``t``, which is a GIG(-3/2, c^2, 1/4) on the left and a shifted exponential on
the right.  ``KG(b, c)`` is a sum of ``b`` independent ``KG(1, c)`` draws.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .dist import log_partition, bprime

__all__ = [
    "T_STAR",
    "T_MIN",
    "T_MAX",
    "KGParams",
    "EnvelopeConfig",
    "KGIterationError",
    "kg_mean",
    "kg_laplace",
    "kg1_density_term",
    "kg1_log_density",
    "kg1_density",
    "kg1_cdf",
    "gig_half_cdf",
    "gig_half_sample",
    "gig_half_sample_trunc",
    "envelope_constants",
    "expected_series_terms",
    "sample_kg1",
    "sample_kg1_many",
    "sample_kg",
    "sample_kg_many",
]

T_STAR = 0.050239
T_MIN = math.log(2) / (3 * math.pi ** 2)
T_MAX = 0.25
MAX_OUTER = 10_000
MAX_TERMS = 1_000

_TWO_PI2 = 2 * math.pi ** 2
_LOG_SQRT_PI = 0.5 * math.log(math.pi)


class KGIterationError(RuntimeError):
    """The rejection loop exceeded its iteration cap (an envelope bug)."""


@dataclass(frozen=True)
class KGParams:
    b: int
    c: float = 0.0

    def __post_init__(self):
        if int(self.b) != self.b or self.b < 1:
            raise ValueError(f"b must be a positive integer, got {self.b}")
        if not math.isfinite(self.c):
            raise ValueError(f"c must be finite, got {self.c}")


@dataclass(frozen=True)
class EnvelopeConfig:
    """Cutoff ``t`` joining the left and right series.

    Both series have decreasing terms for every ``x`` only when
    ``log(2) / (3 pi^2) < t < 1/4``; the default minimizes the expected
    number of proposals uniformly in ``c``.
    """

    t: float = T_STAR

    def __post_init__(self):
        if not (T_MIN < self.t < T_MAX):
            raise ValueError(
                f"KG cutoff t={self.t} outside the admissible range "
                f"({T_MIN:.4f}, {T_MAX})")


_DEFAULT_CFG = EnvelopeConfig()


def _log_sinhc_half(c):
    """log(sinh(c/2) / (c/2)) = B(c) - c/2, finite for all c."""
    c = np.abs(np.asarray(c, dtype=float))
    return log_partition(c) - c / 2


# ---------------------------------------------------------------------------
# Moments and transforms
# ---------------------------------------------------------------------------

def kg_mean(params: KGParams | int, c: float | None = None):
    """E(kappa) = b c^-2 {(c/2) coth(c/2) - 1}, equal to b/12 at c = 0.

    Written as ``b (B'(c) - 1/2) / c`` so the Taylor branch of ``B'`` makes it
    continuous at zero.  Broadcasts over array ``c``.
    """
    if isinstance(params, KGParams):
        b, c = params.b, params.c
    else:
        b = params
    c = np.abs(np.asarray(c, dtype=float))
    small = c < 1e-3
    cs = np.where(small, 1.0, c)
    c2 = c * c
    series = 1 / 12 - c2 / 720 + c2 * c2 / 30240
    out = b * np.where(small, series, (bprime(cs) - 0.5) / cs)
    return out.item() if out.ndim == 0 else out


def kg_laplace(params: KGParams, t):
    """E exp(-t kappa) = [sinhc(c/2) / sinhc(sqrt(t/2 + c^2/4))]^b, sinhc(x) = sinh(x)/x."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("kg_laplace requires t >= 0")
    c = abs(params.c)
    s = np.sqrt(t / 2 + c * c / 4)
    out = np.exp(params.b * (_log_sinhc_half(c) - _log_sinhc_half(2 * s)))
    return out.item() if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Series terms and density
# ---------------------------------------------------------------------------

def _log_a0(x, c, t):
    """Log of the tilted leading term a_0(x; c, t) (left form for x < t)."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    tilt = _log_sinhc_half(c) - c * c * x / 2
    with np.errstate(divide="ignore"):
        left = -_LOG_SQRT_PI - 2.5 * np.log(2 * x) - 1 / (8 * x)
    right = math.log(4 * math.pi ** 2) - _TWO_PI2 * x
    return tilt + np.where(x < t, left, right)


def _term_ratio(n, x, left):
    """a_n(x) / a_0(x); the tilting factor cancels."""
    x = np.asarray(x, dtype=float)
    m2 = (n + 1) ** 2
    with np.errstate(divide="ignore", over="ignore"):
        if n % 2 == 1:
            rl = 4 * x * np.exp(-(n * n - 1) / (8 * x))
        else:
            rl = m2 * np.exp(-(m2 - 1) / (8 * x))
        rr = m2 * np.exp(-_TWO_PI2 * (m2 - 1) * x)
    return np.where(left, rl, rr)


def kg1_density_term(n: int, x, c: float, cfg: EnvelopeConfig = _DEFAULT_CFG):
    """Coefficient a_n(x; c, t) of the KG(1, c) alternating series.

    The left form

        a_n^L(x) = 2 / (sqrt(pi) (2x)^{3/2}) exp(-n^2 / (8x))               (n odd)
                 = (n+1)^2 / (sqrt(pi) (2x)^{5/2}) exp(-(n+1)^2 / (8x))     (n even)

    is used for ``x < t`` and the right form
    ``a_n^R(x) = 4 pi^2 (n+1)^2 exp(-2 pi^2 (n+1)^2 x)`` for ``x >= t``, both
    multiplied by the tilt ``sinhc(c/2) exp(-c^2 x / 2)``.
    """
    if not isinstance(cfg, EnvelopeConfig):
        raise TypeError("cfg must be an EnvelopeConfig")
    if int(n) != n or n < 0:
        raise ValueError(f"n must be a nonnegative integer, got {n}")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("kg1_density_term requires x > 0")
    out = np.exp(_log_a0(x, c, cfg.t)) * _term_ratio(int(n), x, x < cfg.t)
    return out.item() if out.ndim == 0 else out


def kg1_log_density(x, c: float = 0.0, cfg: EnvelopeConfig = _DEFAULT_CFG,
                    n_terms: int = 60):
    """Log density of KG(1, c) from ``n_terms`` terms of the alternating series."""
    x = np.asarray(x, dtype=float)
    out = np.full(x.shape, -np.inf)
    pos = x > 0
    xp = x[pos]
    left = xp < cfg.t
    total = np.ones_like(xp)
    for n in range(1, n_terms):
        total += (-1) ** n * _term_ratio(n, xp, left)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[pos] = _log_a0(xp, c, cfg.t) + np.log(total)
    return out.item() if out.ndim == 0 else out


def kg1_density(x, c: float = 0.0, cfg: EnvelopeConfig = _DEFAULT_CFG, n_terms: int = 60):
    return np.exp(kg1_log_density(x, c, cfg, n_terms))


# ---------------------------------------------------------------------------
# Closed-form partial integrals of s^{-p} exp(-alpha s - beta / s)
# ---------------------------------------------------------------------------

def _scaled_partial_integrals(x, alpha, beta):
    """Return ``e^{2 s0} int_0^x s^{-q} exp(-alpha s - beta/s) ds`` for q = 5/2, 3/2.

    ``s0 = sqrt(alpha beta)``.  With ``u = sqrt(beta/x) -+ sqrt(alpha x)``,
    the integrals reduce to erfc terms; the ``e^{2 s0}`` scaling together
    with ``erfcx`` keeps them finite for large ``alpha``.
    """
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    s0 = np.sqrt(alpha * beta)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rb = np.sqrt(beta / x)
        ra = np.sqrt(alpha * x)
        um = rb - ra
        up = rb + ra
        e_um = np.exp(-um * um)
        tail = e_um * special.erfcx(up)  # = e^{4 s0} erfc(up)
        head = special.erfc(um)
        g32 = math.sqrt(math.pi) / (2 * np.sqrt(beta)) * (head + tail)
        g52 = (e_um / (beta * np.sqrt(x))
               + math.sqrt(math.pi) / (4 * beta ** 1.5)
               * ((1 + 2 * s0) * head + (1 - 2 * s0) * tail))
    inf = np.isinf(x)
    g32 = np.where(inf, math.sqrt(math.pi) / np.sqrt(beta), g32)
    g52 = np.where(inf, math.sqrt(math.pi) * (1 + 2 * s0) / (2 * beta ** 1.5), g52)
    zero = x <= 0
    return np.where(zero, 0.0, g52), np.where(zero, 0.0, g32)


def gig_half_cdf(x, c: float):
    """CDF of GIG(p=-3/2, a=c^2, b=1/4), density prop. to x^{-5/2} e^{-(c^2 x + 1/(4x))/2}.

    At ``c = 0`` this is the InvGamma(3/2, 1/8) CDF.
    """
    c = abs(float(c))
    g52, _ = _scaled_partial_integrals(x, c * c / 2, 0.125)
    out = np.clip(g52 / (math.sqrt(math.pi) * 2 ** 2.5 * (c + 2)), 0.0, 1.0)
    return out.item() if out.ndim == 0 else out


def kg1_cdf(x, c: float = 0.0, n_terms: int = 60, cutoff: float = 0.2):
    """CDF of KG(1, c) by term-wise integration of the alternating series.

    Below ``cutoff`` the left series is integrated in closed form (erfc
    expressions); above it the right series gives the survival function
    ``sinhc(c/2) sum_k (-1)^{k-1} 4 pi^2 k^2 e^{-r_k x} / r_k`` with
    ``r_k = 2 pi^2 k^2 + c^2/2``.
    """
    x = np.asarray(x, dtype=float)
    c = abs(float(c))
    alpha = c * c / 2
    log_tilt = float(_log_sinhc_half(c))
    out = np.zeros(x.shape)
    lo = (x > 0) & (x < cutoff)
    hi = x >= cutoff
    if np.any(lo):
        xl = x[lo]
        acc = np.zeros(xl.shape)
        for j in range(1, 2 * n_terms, 2):
            beta = j * j / 8
            g52, g32 = _scaled_partial_integrals(xl, alpha, beta)
            # sinhc(c/2) e^{-2 s0} with s0 = c j / 4
            scale = math.exp(log_tilt - c * j / 2)
            acc += scale * (j * j * g52 / (math.sqrt(math.pi) * 2 ** 2.5)
                            - 2 * g32 / (math.sqrt(math.pi) * 2 ** 1.5))
        out[lo] = acc
    if np.any(hi):
        xh = x[hi]
        surv = np.zeros(xh.shape)
        for k in range(1, n_terms + 1):
            r = _TWO_PI2 * k * k + alpha
            surv += (-1) ** (k - 1) * np.exp(log_tilt + math.log(4 * math.pi ** 2 * k * k / r) - r * xh)
        out[hi] = 1 - surv
    out = np.clip(out, 0.0, 1.0)
    return out.item() if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# GIG(-3/2, c^2, 1/4) proposal
# ---------------------------------------------------------------------------

def gig_half_sample(c, rng: np.random.Generator):
    """Draw GIG(-3/2, c^2, 1/4) for each entry of ``c``.

    With ``w = |c|/2`` the reciprocal ``1/X = 2|c| W`` where ``W`` is the sum
    of an inverse Gaussian (mean 1, shape ``w``) and an independent gamma
    with rate ``w/2`` whose shape is 1 with probability ``w/(w+1)`` and 3/2
    otherwise.  For tiny ``|c|`` the law is InvGamma(3/2, 1/8).
    """
    c = np.abs(np.asarray(c, dtype=float))
    shape = c.shape
    c = c.ravel()
    out = np.empty(c.size)
    tiny = c < 1e-6
    if np.any(tiny):
        out[tiny] = 1.0 / (8.0 * rng.gamma(1.5, 1.0, size=int(tiny.sum())))
    big = ~tiny
    if np.any(big):
        cb = c[big]
        w = cb / 2
        ig = rng.wald(1.0, w)
        k = np.where(rng.random(cb.size) < w / (w + 1), 1.0, 1.5)
        g = rng.gamma(k, 2.0 / w)
        out[big] = 1.0 / (2 * cb * (ig + g))
    return out.reshape(shape)


def gig_half_sample_trunc(c, t: float, rng: np.random.Generator, max_tries: int = MAX_OUTER,
                          p_accept=None):
    """GIG(-3/2, c^2, 1/4) truncated to (0, t), by repeating until X < t.

    Each pending entry draws a block of about ``2 / P(X < t)`` proposals per
    round and keeps the first one below ``t``; this is the repeat-until rule,
    batched.  ``p_accept`` may pass precomputed ``gig_half_cdf(t, c)``.
    """
    c = np.abs(np.asarray(c, dtype=float))
    shape = c.shape
    c = c.ravel()
    p_acc = _gig_cdf_vec(t, c) if p_accept is None else np.asarray(p_accept, dtype=float).ravel()
    block_all = np.clip(np.ceil(2.0 / np.maximum(p_acc, 1e-3)), 1, 32).astype(np.int64)
    out = np.empty(c.size)
    todo = np.arange(c.size)
    tries = 0
    while todo.size:
        block = block_all[todo]
        draw = gig_half_sample(np.repeat(c[todo], block), rng)
        starts = np.concatenate(([0], np.cumsum(block)[:-1]))
        pos = np.where(draw < t, np.arange(draw.size), draw.size)
        first = np.minimum.reduceat(pos, starts)
        hit = first < draw.size
        out[todo[hit]] = draw[first[hit]]
        todo = todo[~hit]
        tries += 1
        if tries > max_tries:
            raise KGIterationError("truncated GIG sampler exceeded its iteration cap")
    return out.reshape(shape) if shape else out[0]


# ---------------------------------------------------------------------------
# KG(1, c) sampler
# ---------------------------------------------------------------------------

def _gig_cdf_vec(t, c):
    g52, _ = _scaled_partial_integrals(np.full(c.shape, t), c * c / 2, 0.125)
    return np.clip(g52 / (math.sqrt(math.pi) * 2 ** 2.5 * (c + 2)), 0.0, 1.0)


def envelope_constants(c, cfg: EnvelopeConfig = _DEFAULT_CFG):
    """Expected proposals per accepted draw, ``M(c) = sinhc(c/2) (A_L + A_R)``."""
    c = np.abs(np.atleast_1d(np.asarray(c, dtype=float)))
    log_left = np.log(c + 2) - c / 2 + np.log(_gig_cdf_vec(cfg.t, c))
    rate = _TWO_PI2 + c * c / 2
    log_right = math.log(4 * math.pi ** 2) - rate * cfg.t - np.log(rate)
    out = np.exp(_log_sinhc_half(c) + np.logaddexp(log_left, log_right))
    return out.item() if np.ndim(out) == 1 and out.size == 1 else out


def expected_series_terms(c: float, cfg: EnvelopeConfig = _DEFAULT_CFG, n_max: int = 8) -> float:
    """Expected number of series terms inspected per proposal.

    The walk reaches term ``k + 1`` exactly when ``V`` lies between the
    partial sums ``S_{k-1}`` and ``S_k``, an event of probability
    ``E_g[a_k(X) / a_0(X)]`` under the proposal ``g``; summing these gives
    ``1 + sum_k int a_k / int a_0``.
    """
    c = abs(float(c))
    t = cfg.t
    log_z = math.log(float(envelope_constants(c, cfg)))
    total = 1.0
    mode = 1 / (2 * c) if c > 0 else 1 / 12
    left_pts = [p for p in (mode / 4, mode / 2, mode, 2 * mode) if p < t]
    for k in range(1, n_max + 1):
        def f(x, k=k):
            return math.exp(_log_a0(x, c, t) - log_z) * _term_ratio(k, x, x < t)
        part = integrate.quad(f, 0, t, points=left_pts or None, epsabs=1e-15, limit=200)[0]
        part += integrate.quad(f, t, np.inf, epsabs=1e-15, limit=200)[0]
        total += part
    return total


def sample_kg1_many(c, rng: np.random.Generator, cfg: EnvelopeConfig = _DEFAULT_CFG,
                    return_counts: bool = False):
    """Exact KG(1, c_i) draws for every entry of ``c``.

    All pending draws advance together: each round proposes from the
    two-piece envelope, then walks the alternating series with
    ``Y = V a_0(X)``, accepting once ``Y`` falls below an odd partial sum and
    rejecting once it exceeds an even one.  In ratio form ``S_m / a_0(X)`` the
    ``sinhc(c/2)`` factors cancel, so nothing overflows for large ``|c|``.

    Returns the draws, plus (when ``return_counts``) the number of proposals
    and the total number of series terms inspected for each draw.
    """
    c = np.abs(np.asarray(c, dtype=float))
    shape = c.shape
    c = c.ravel()
    t = cfg.t
    n = c.size
    out = np.empty(n)
    outer = np.zeros(n, dtype=np.int64)
    inner = np.zeros(n, dtype=np.int64)
    p_gig = _gig_cdf_vec(t, c)
    log_left = np.log(c + 2) - c / 2 + np.log(p_gig)
    rate = _TWO_PI2 + c * c / 2
    log_right = math.log(4 * math.pi ** 2) - rate * t - np.log(rate)
    p_right = special.expit(log_right - log_left)
    todo = np.arange(n)
    for _ in range(MAX_OUTER):
        if todo.size == 0:
            break
        m = todo.size
        outer[todo] += 1
        go_right = rng.random(m) < p_right[todo]
        x = np.empty(m)
        if np.any(go_right):
            x[go_right] = t + rng.standard_exponential(int(go_right.sum())) / rate[todo[go_right]]
        if np.any(~go_right):
            sel = todo[~go_right]
            x[~go_right] = gig_half_sample_trunc(c[sel], t, rng, p_accept=p_gig[sel])
        v = rng.random(m)
        left = x < t
        s = np.ones(m)
        accepted = np.zeros(m, dtype=bool)
        open_ = np.arange(m)
        k = 0
        while open_.size:
            k += 1
            if k > MAX_TERMS:
                raise KGIterationError("alternating series failed to decide")
            r = _term_ratio(k, x[open_], left[open_])
            if k % 2 == 1:
                s[open_] -= r
                decided = v[open_] < s[open_]
                accepted[open_[decided]] = True
            else:
                s[open_] += r
                decided = v[open_] > s[open_]
            inner[todo[open_[decided]]] += k
            open_ = open_[~decided]
        out[todo[accepted]] = x[accepted]
        todo = todo[~accepted]
    else:
        raise KGIterationError(f"KG sampler exceeded {MAX_OUTER} proposals")
    out = out.reshape(shape)
    if return_counts:
        return out, outer.reshape(shape), inner.reshape(shape)
    return out


def sample_kg1(c: float, cfg: EnvelopeConfig = _DEFAULT_CFG, rng: np.random.Generator | None = None):
    """One KG(1, c) draw with its instrumentation: ``(value, outer_iters, inner_terms)``."""
    if rng is None:
        raise ValueError("an explicit rng is required")
    x, o, i = sample_kg1_many(np.array([c]), rng, cfg, return_counts=True)
    return float(x[0]), int(o[0]), int(i[0])


def sample_kg(params: KGParams, cfg: EnvelopeConfig = _DEFAULT_CFG,
              rng: np.random.Generator | None = None) -> float:
    """KG(b, c) as the sum of ``b`` independent KG(1, c) draws."""
    if rng is None:
        raise ValueError("an explicit rng is required")
    return float(sample_kg1_many(np.full(params.b, params.c), rng, cfg).sum())


def sample_kg_many(b, c, rng: np.random.Generator, cfg: EnvelopeConfig = _DEFAULT_CFG):
    """Draw KG(b_i, c_i) for paired arrays ``b`` (positive integers) and ``c``."""
    b = np.asarray(b, dtype=np.int64).ravel()
    c = np.broadcast_to(np.asarray(c, dtype=float).ravel(), b.shape)
    if np.any(b < 1):
        raise ValueError("b must be positive integers")
    if b.size == 0:
        return np.zeros(0)
    draws = sample_kg1_many(np.repeat(c, b), rng, cfg)
    starts = np.concatenate(([0], np.cumsum(b)[:-1]))
    return np.add.reduceat(draws, starts)
