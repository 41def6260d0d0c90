"""Model diagnostics and predictive metrics.

Predictive quantities are computed conditional on random effects: every
saved draw supplies a linear predictor ``eta`` for each test point and a
dispersion, and the model density is evaluated pointwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from .dist import bprime, cobin_cdf, log_h_table, log_partition, micobin_cdf

__all__ = [
    "MetricReport",
    "quantile_residuals",
    "pointwise_log_density",
    "negtest_ll",
    "mspe",
    "mess",
    "batch_means_covariance",
    "waic",
    "split_rhat",
    "metrics",
]

MIN_DRAWS = 10


@dataclass
class MetricReport:
    """Estimation error of one coefficient plus optional predictive and sampling metrics.

    For a single fit ``bias`` is the signed error of the point estimate and
    ``rmse`` its absolute value; replicate summaries average these.
    """

    bias: float
    rmse: float
    negtestLL: float | None = None
    mspe: float | None = None
    mess: float | None = None
    waic: float | None = None

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def quantile_residuals(y, theta, dispersion, family: str = "cobin") -> np.ndarray:
    """Randomization-free quantile residuals ``Phi^-1(F(y_i; theta_i, dispersion))``.

    Both families have continuous CDFs (micobin puts density, not mass, at 0
    and 1), so no randomization is needed.  ``dispersion`` is ``lam`` for
    cobin and ``psi`` for micobin.  Values of F at exactly 0 or 1 give
    infinite residuals.
    """
    y = np.asarray(y, dtype=float)
    if family == "cobin":
        F = cobin_cdf(y, theta, int(dispersion))
    elif family == "micobin":
        F = micobin_cdf(y, theta, float(dispersion))
    else:
        raise ValueError(f"unknown family {family!r}")
    return stats.norm.ppf(np.asarray(F, dtype=float))


def pointwise_log_density(y, eta, dispersion, family: str = "cobin", L: int = 70,
                          chunk: int = 256) -> np.ndarray:
    """Matrix of ``log p(y_j | eta[m, j], dispersion[m])`` (draws x points).

    ``eta`` has shape (M, n); ``dispersion`` has length M.  The base measure
    table is built once and shared across draws.
    """
    y = np.asarray(y, dtype=float).ravel()
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    disp = np.asarray(dispersion, dtype=float).ravel()
    M, n = eta.shape
    if n != y.size or disp.size != M:
        raise ValueError("eta must be (draws, points) and match y and dispersion")
    kern = eta * y[None, :] - log_partition(eta)
    if family == "cobin":
        lam = disp.astype(int)
        if np.any(lam != disp) or lam.min() < 1:
            raise ValueError("cobin dispersion draws must be positive integers")
        H = log_h_table(y, int(lam.max()))
        return H[:, lam - 1].T + lam[:, None] * kern
    if family != "micobin":
        raise ValueError(f"unknown family {family!r}")
    if np.any((disp <= 0) | (disp >= 1)):
        raise ValueError("micobin dispersion draws must lie in (0, 1)")
    H = log_h_table(y, L)
    ls = np.arange(1, L + 1)
    out = np.empty((M, n))
    for s in range(0, M, chunk):
        psi = disp[s:s + chunk]
        logw = (np.log(ls)[None, :] + (ls - 1)[None, :] * np.log1p(-psi)[:, None]
                + 2 * np.log(psi)[:, None])
        terms = (logw[:, None, :] + H[None, :, :]
                 + kern[s:s + chunk, :, None] * ls[None, None, :])
        out[s:s + chunk] = special.logsumexp(terms, axis=2)
    return out


def negtest_ll(log_dens) -> float:
    """``-(1/n) sum_j log{(1/M) sum_m p(y_j | theta^(m))}`` from a draws x points matrix."""
    ld = np.atleast_2d(np.asarray(log_dens, dtype=float))
    M = ld.shape[0]
    return float(-np.mean(special.logsumexp(ld, axis=0) - np.log(M)))


def mspe(mu_true, mu_hat) -> float:
    mu_true = np.asarray(mu_true, dtype=float)
    mu_hat = np.asarray(mu_hat, dtype=float)
    if mu_true.shape != mu_hat.shape:
        raise ValueError("mu_true and mu_hat must have the same shape")
    return float(np.mean((mu_true - mu_hat) ** 2))


def _as_draw_matrix(draws) -> np.ndarray:
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValueError("draws must be an (M, p) array")
    if x.shape[0] < MIN_DRAWS:
        raise ValueError(f"at least {MIN_DRAWS} draws are needed, got {x.shape[0]}")
    return x


def batch_means_covariance(draws, batch_size: int | None = None) -> np.ndarray:
    """Multivariate batch-means estimate of the asymptotic covariance.

    Batch size defaults to ``floor(sqrt(M))``; trailing draws that do not
    fill a batch are dropped.
    """
    x = _as_draw_matrix(draws)
    M = x.shape[0]
    b = int(np.sqrt(M)) if batch_size is None else int(batch_size)
    a = M // b
    if b < 1 or a < 2:
        raise ValueError("need at least two batches")
    used = x[:a * b]
    means = used.reshape(a, b, -1).mean(axis=1)
    dev = means - used.mean(axis=0)
    return b * (dev.T @ dev) / (a - 1)


def mess(draws, batch_size: int | None = None) -> float:
    """Multivariate effective sample size ``M (det Lambda / det Sigma)^(1/p)``.

    ``Lambda`` is the sample covariance and ``Sigma`` the batch-means
    covariance.
    """
    x = _as_draw_matrix(draws)
    M, p = x.shape
    lam = np.atleast_2d(np.cov(x, rowvar=False))
    sig = batch_means_covariance(x, batch_size)
    s1, ld_lam = np.linalg.slogdet(lam)
    s2, ld_sig = np.linalg.slogdet(sig)
    if s1 <= 0 or s2 <= 0:
        raise ValueError("covariance estimate is singular")
    return float(M * np.exp((ld_lam - ld_sig) / p))


def waic(log_dens) -> float:
    """WAIC on the deviance scale, ``-2 (lppd - p_waic)``, with the variance penalty."""
    ld = np.atleast_2d(np.asarray(log_dens, dtype=float))
    M = ld.shape[0]
    if M < 2:
        raise ValueError("WAIC needs at least two draws")
    lppd = special.logsumexp(ld, axis=0) - np.log(M)
    p_waic = ld.var(axis=0, ddof=1)
    return float(-2 * np.sum(lppd - p_waic))


def split_rhat(chains) -> np.ndarray:
    """Split-chain potential scale reduction factor per parameter.

    ``chains`` has shape (C, M) or (C, M, p); each chain is cut in half.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    C, M, p = x.shape
    h = M // 2
    if h < 2:
        raise ValueError("chains are too short to split")
    halves = np.concatenate([x[:, :h], x[:, M - h:]], axis=0)
    W = halves.var(axis=1, ddof=1).mean(axis=0)
    B = h * halves.mean(axis=1).var(axis=0, ddof=1)
    var_plus = (h - 1) / h * W + B / h
    return np.sqrt(var_plus / W)


def metrics(draws, test, family: str, eta_test=None, target: int = 1,
            beta_true=None, L: int = 70) -> MetricReport:
    """Summaries of one posterior fit.

    draws
        :class:`~cobin.gibbs.PosteriorDraws`.
    test
        Held-out data with ``y`` and ``mu`` (true means), or None.
    eta_test
        Posterior predictive linear predictors at the test points
        (draws x points), e.g. from :func:`~cobin.gibbs.predict_at`.

    Bias refers to coefficient ``target`` against ``beta_true``; mESS is over
    all coefficients.
    """
    beta_hat = draws.beta.mean(axis=0)
    if beta_true is None:
        err = float("nan")
    else:
        err = float(beta_hat[target] - np.asarray(beta_true, dtype=float)[target])
    report = MetricReport(bias=err, rmse=abs(err))
    if draws.M >= MIN_DRAWS:
        report.mess = mess(draws.beta)
    if test is not None and eta_test is not None:
        eta_test = np.atleast_2d(eta_test)
        if eta_test.shape != (draws.M, np.size(test.y)):
            raise ValueError("eta_test must be (draws, test points)")
        ld = pointwise_log_density(test.y, eta_test, draws.dispersion, family, L)
        report.negtestLL = negtest_ll(ld)
        report.mspe = mspe(test.mu, bprime(eta_test).mean(axis=0))
    return report
