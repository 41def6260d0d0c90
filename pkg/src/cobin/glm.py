"""Point estimation for cobin regression: IRLS (MLE) and EM (posterior mode).

The score equations do not involve the dispersion ``lam``, so the MLE of the
coefficients is shared by every cobin model; ``lam`` is selected afterwards
by profiling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .dist import (bdoubleprime, bprime, cobit_link, irwin_hall_scaled_log_density,
                   log_h_table, log_partition)
from .kg import kg_mean

__all__ = [
    "ConvergenceError",
    "RegressionModel",
    "FitResult",
    "natural_parameter",
    "loglik",
    "score",
    "log_posterior",
    "irls_fit",
    "em_map",
    "profile_lambda",
]

LINKS = ("cobit", "logit")


class ConvergenceError(RuntimeError):
    pass


@dataclass
class RegressionModel:
    """Design ``X`` (n x p), response ``y`` in [0, 1], link, optional N(0, Sigma) prior."""

    X: np.ndarray
    y: np.ndarray
    link: str = "cobit"
    prior_beta: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        n, p = self.X.shape
        if self.y.size != n:
            raise ValueError(f"X has {n} rows but y has {self.y.size} entries")
        if self.link not in LINKS:
            raise ValueError(f"link must be one of {LINKS}, got {self.link!r}")
        if np.any((self.y < 0) | (self.y > 1)) or np.any(~np.isfinite(self.y)):
            raise ValueError("y must lie in [0, 1]")
        if self.prior_beta is not None:
            S = np.asarray(self.prior_beta, dtype=float)
            if S.ndim == 0:
                S = float(S) * np.eye(p)
            if S.shape != (p, p) or not np.allclose(S, S.T):
                raise ValueError("prior_beta must be a symmetric p x p covariance")
            self.prior_beta = S

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def has_boundary(self) -> bool:
        return bool(np.any((self.y == 0) | (self.y == 1)))

    def prior_precision(self) -> np.ndarray:
        if self.prior_beta is None:
            return np.zeros((self.p, self.p))
        return linalg.inv(self.prior_beta)


@dataclass
class FitResult:
    beta_hat: np.ndarray
    lambda_hat: int | None
    iterations: int
    converged: bool
    loglik: float
    grad_norm: float = float("nan")
    history: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Likelihood pieces
# ---------------------------------------------------------------------------

def _mean_and_derivs(model: RegressionModel, eta):
    """Return (theta, mu, dmu/deta) under the model link."""
    if model.link == "cobit":
        theta = eta
        mu = bprime(eta)
        dmu = bdoubleprime(eta)
    else:
        mu = np.clip(special.expit(eta), 1e-15, 1 - 1e-15)
        theta = cobit_link(mu)
        dmu = mu * (1 - mu)
    return np.asarray(theta), np.asarray(mu), np.asarray(dmu)


def natural_parameter(model: RegressionModel, beta) -> np.ndarray:
    return _mean_and_derivs(model, model.X @ beta)[0]


def loglik(model: RegressionModel, beta, lam: int = 1, include_base: bool = True) -> float:
    """Cobin log-likelihood ``sum_i log p(y_i; theta_i, 1/lam)``.

    ``include_base=False`` drops ``sum_i log h(y_i, lam)``, which is free of
    ``beta``.
    """
    theta = natural_parameter(model, np.asarray(beta, dtype=float))
    ll = lam * float(np.sum(theta * model.y - log_partition(theta)))
    if include_base:
        ll += float(np.sum(irwin_hall_scaled_log_density(model.y, lam)))
    return ll


def score(model: RegressionModel, beta, lam: int = 1) -> np.ndarray:
    """Gradient of :func:`loglik` in ``beta``: lam sum_i (y_i - mu_i) mu_i' x_i / B''(theta_i)."""
    theta, mu, dmu = _mean_and_derivs(model, model.X @ np.asarray(beta, dtype=float))
    return lam * model.X.T @ ((model.y - mu) * dmu / bdoubleprime(theta))


def log_posterior(model: RegressionModel, beta, lam: int = 1) -> float:
    """Log-likelihood (without base measure) plus the Gaussian log prior kernel."""
    beta = np.asarray(beta, dtype=float)
    out = loglik(model, beta, lam, include_base=False)
    if model.prior_beta is not None:
        out -= 0.5 * float(beta @ linalg.solve(model.prior_beta, beta, assume_a="pos"))
    return out


def _check_rank(X):
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise ValueError("design matrix is rank deficient")


def _initial_beta(model: RegressionModel) -> np.ndarray:
    mu0 = np.clip(model.y, 0.02, 0.98)
    z = cobit_link(mu0) if model.link == "cobit" else special.logit(mu0)
    return np.linalg.lstsq(model.X, z, rcond=None)[0]


# ---------------------------------------------------------------------------
# IRLS
# ---------------------------------------------------------------------------

def irls_fit(model: RegressionModel, tol: float = 1e-8, max_iter: int = 100,
             beta0=None, max_halvings: int = 30) -> FitResult:
    """Fisher scoring for the MLE (or MAP when ``prior_beta`` is set).

    Each step solves ``(X'WX + P) delta = score``, ``W = (dmu/deta)^2 / B''``,
    and is halved up to ``max_halvings`` times until the objective does not
    decrease.  Converged means the sup-norm of the (unit-dispersion) gradient
    is below ``tol``.  The result does not depend on ``lam``.
    """
    _check_rank(model.X)
    P = model.prior_precision()
    beta = _initial_beta(model) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    obj = log_posterior(model, beta)
    history = [obj]
    grad_norm = np.inf
    for it in range(1, max_iter + 1):
        theta, mu, dmu = _mean_and_derivs(model, model.X @ beta)
        v = bdoubleprime(theta)
        grad = model.X.T @ ((model.y - mu) * dmu / v) - P @ beta
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < tol:
            return FitResult(beta, None, it - 1, True, loglik(model, beta, include_base=False),
                             grad_norm, history)
        info = (model.X * (dmu * dmu / v)[:, None]).T @ model.X + P
        step = linalg.solve(info, grad, assume_a="pos")
        for _ in range(max_halvings + 1):
            cand = beta + step
            cand_obj = log_posterior(model, cand)
            if np.isfinite(cand_obj) and cand_obj >= obj - 1e-12 * abs(obj):
                break
            step = step / 2
        else:
            raise ConvergenceError(f"IRLS step-halving failed at iteration {it}")
        if np.all(cand == beta):
            # no representable progress: we are at the floating point optimum
            break
        beta, obj = cand, cand_obj
        history.append(obj)
    theta, mu, dmu = _mean_and_derivs(model, model.X @ beta)
    grad = model.X.T @ ((model.y - mu) * dmu / bdoubleprime(theta)) - P @ beta
    grad_norm = float(np.max(np.abs(grad)))
    if grad_norm >= tol:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations "
                               f"(gradient norm {grad_norm:.3g})")
    return FitResult(beta, None, max_iter, True, loglik(model, beta, include_base=False),
                     grad_norm, history)


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------

def _check_boundary(model: RegressionModel, lam: int):
    if lam >= 2 and model.has_boundary:
        raise ValueError(
            "responses at 0 or 1 have zero cobin density for lam >= 2; "
            "use lam = 1 or a micobin model")


def em_map(model: RegressionModel, lam: int = 1, tol: float = 1e-10, max_iter: int = 10_000,
           beta0=None, beta_tol: float = 1e-8) -> FitResult:
    """EM for the posterior mode (MLE when ``prior_beta`` is None), cobit link.

    E-step: ``kappa_i = E KG(lam, eta_i) = lam (B'(eta_i) - 1/2) / eta_i``
    (``lam / 12`` at ``eta_i = 0``).  M-step:
    ``beta = (X' K X + Sigma^-1)^-1 X' lam (y - 1/2)``.  Stops when the
    relative change of the log posterior is below ``tol`` and the largest
    coefficient change is below ``beta_tol``.
    """
    if model.link != "cobit":
        raise ValueError("EM via KG augmentation requires the canonical cobit link")
    _check_boundary(model, lam)
    P = model.prior_precision()
    X = model.X
    beta = np.zeros(model.p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    rhs = lam * (X.T @ (model.y - 0.5))
    obj = log_posterior(model, beta, lam)
    history = [obj]
    for it in range(1, max_iter + 1):
        kappa = kg_mean(lam, X @ beta)
        A = (X * kappa[:, None]).T @ X + P
        new = linalg.solve(A, rhs, assume_a="pos")
        new_obj = log_posterior(model, new, lam)
        history.append(new_obj)
        d_beta = float(np.max(np.abs(new - beta)))
        d_obj = abs(new_obj - obj) / max(1.0, abs(obj))
        beta, obj = new, new_obj
        if d_obj < tol and d_beta < beta_tol:
            g = score(model, beta, lam) - P @ beta
            return FitResult(beta, lam, it, True, loglik(model, beta, lam), float(np.max(np.abs(g))),
                             history)
    raise ConvergenceError(f"EM did not converge in {max_iter} iterations")


def profile_lambda(model: RegressionModel, beta_hat=None, Lmax: int = 70,
                   return_objective: bool = False):
    """Pick ``lam`` in 1..Lmax maximizing ``log p(beta_hat(lam)) + sum_i log p(y_i; lam)``.

    Without a prior ``beta_hat`` does not depend on ``lam`` and is computed
    once (by IRLS if not supplied); with a prior, EM is rerun for each ``lam``
    warm-started from the previous solution.
    """
    if Lmax < 1:
        raise ValueError("Lmax must be at least 1")
    lams = np.arange(1, Lmax + 1)
    if model.has_boundary:
        # only lam = 1 puts mass on {0, 1}
        lams = lams[:1]
    H = log_h_table(model.y, int(lams[-1]))
    obj = np.full(lams.size, -np.inf)
    if model.prior_beta is None:
        beta = irls_fit(model).beta_hat if beta_hat is None else np.asarray(beta_hat, dtype=float)
        theta = natural_parameter(model, beta)
        kernel = float(np.sum(theta * model.y - log_partition(theta)))
        obj = lams * kernel + H.sum(axis=0)[lams - 1]
    else:
        warm = beta_hat
        for j, lam in enumerate(lams):
            fit = em_map(model, int(lam), beta0=warm)
            warm = fit.beta_hat
            obj[j] = log_posterior(model, fit.beta_hat, int(lam)) + H[:, lam - 1].sum()
    best = int(lams[int(np.argmax(obj))])
    return (best, obj) if return_objective else best
