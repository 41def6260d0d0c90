"""Blocked Gibbs samplers for cobin and micobin regression.

Conditionally on Kolmogorov-Gamma variables ``kappa_i ~ KG(lam_i, eta_i)``
the cobin likelihood in ``eta`` is Gaussian with precision ``kappa_i`` and
"response" ``lam_i (y_i - 1/2) / kappa_i``, so the coefficients have a
Gaussian full conditional.  Dispersions are discrete (``lam`` in 1..L) and
are drawn from categorical full conditionals.

The mixed model ``eta = X beta + Z u``, ``u ~ N(0, Sigma(vartheta))`` uses a
partially collapsed sampler: ``beta`` and ``vartheta`` are drawn with ``u``
integrated out, then ``u`` from its full conditional.  Every step is written
in terms of the q x q precision ``P = Sigma^-1 + Z' K Z``, so dense kernels,
sparse precisions and diagonal random intercepts share one code path.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg, sparse
from scipy.spatial.distance import cdist

from ._linalg import DenseFactor, DiagonalFactor, FactorError, SparseFactor
from .dist import bprime, log_h_table, log_partition
from .glm import RegressionModel
from .kg import EnvelopeConfig, sample_kg_many

__all__ = [
    "SamplerError",
    "PriorSpec",
    "MixedModelSpec",
    "PosteriorDraws",
    "AugmentedState",
    "default_lambda_prior",
    "exponential_correlation",
    "beta_conditional",
    "gibbs_cobin",
    "gibbs_micobin",
    "gibbs_mixed",
    "run_chains",
    "predict_at",
]

FAMILIES = ("cobin", "micobin")
COV_MODELS = ("dense_kernel", "sparse_precision", "iid")


class SamplerError(RuntimeError):
    """Numerical failure inside a sampler, tagged with the iteration index."""


def default_lambda_prior(L: int = 70) -> np.ndarray:
    """p(lam) prop. to 36 lam Gamma(lam+1) / Gamma(lam+5), truncated to 1..L."""
    lam = np.arange(1, L + 1, dtype=float)
    w = 36 * lam / ((lam + 1) * (lam + 2) * (lam + 3) * (lam + 4))
    return w / w.sum()


@dataclass
class PriorSpec:
    """Priors: beta ~ N(0, sigma_beta), lam ~ lambda_prior, psi ~ Beta(psi_prior),
    sigma_u ~ half-Cauchy(0, sigma_u_prior); ``rho_bounds`` is the uniform
    support of a free range parameter."""

    sigma_beta: float | np.ndarray = 100.0 ** 2
    lambda_prior: np.ndarray | None = None
    psi_prior: tuple[float, float] = (2.0, 2.0)
    L: int = 70
    sigma_u_prior: float = 1.0
    rho_bounds: tuple[float, float] = (1e-3, 10.0)

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise ValueError("L must be a positive integer")
        if self.lambda_prior is None:
            self.lambda_prior = default_lambda_prior(self.L)
        lp = np.asarray(self.lambda_prior, dtype=float)
        if lp.shape != (self.L,) or np.any(lp < 0) or abs(lp.sum() - 1) > 1e-8:
            raise ValueError("lambda_prior must be a probability vector of length L")
        self.lambda_prior = lp
        a, b = self.psi_prior
        if a <= 0 or b <= 0:
            raise ValueError("psi_prior parameters must be positive")
        if self.sigma_u_prior <= 0:
            raise ValueError("sigma_u_prior must be positive")

    def sigma_beta_matrix(self, p: int) -> np.ndarray:
        S = np.asarray(self.sigma_beta, dtype=float)
        if S.ndim == 0:
            S = float(S) * np.eye(p)
        if S.shape != (p, p) or not np.allclose(S, S.T):
            raise ValueError("sigma_beta must be a symmetric p x p matrix")
        try:
            linalg.cholesky(S)
        except linalg.LinAlgError:
            raise ValueError("sigma_beta must be positive definite") from None
        return S

    def beta_precision(self, p: int) -> np.ndarray:
        return linalg.inv(self.sigma_beta_matrix(p))

    def log_lambda_prior(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.lambda_prior)


def exponential_correlation(a, b, rho: float) -> np.ndarray:
    return np.exp(-cdist(np.atleast_2d(a), np.atleast_2d(b)) / rho)


@dataclass
class MixedModelSpec:
    """Random-effect structure ``Z u``, ``u ~ N(0, Sigma(sigma2_u, rho))``.

    cov_model
        ``"dense_kernel"``: ``Sigma = sigma2_u exp(-d / rho)`` on ``coords``.
        ``"sparse_precision"``: ``precision(sigma2_u, rho)`` returns a sparse
        ``Sigma^-1``; ``precision_logdet`` optionally gives its log
        determinant in closed form.
        ``"iid"``: ``Sigma = sigma2_u I`` (random intercepts).
    ``Z=None`` means the identity (one effect per observation).
    ``sigma2_u`` and ``rho`` are initial values; ``rho`` stays fixed unless
    ``free_rho``.  ``mh_scale`` is the random-walk sd on the log scale,
    adapted during burn-in when ``adapt``.
    """

    cov_model: str = "dense_kernel"
    Z: np.ndarray | sparse.spmatrix | None = None
    coords: np.ndarray | None = None
    sigma2_u: float = 1.0
    rho: float = 0.1
    kernel: str = "exponential"
    precision: Callable | None = None
    precision_logdet: Callable | None = None
    vartheta_logprior: Callable | None = None
    mh_scale: float = 0.5
    adapt: bool = True
    free_rho: bool = False
    ordering: str = "MMD_AT_PLUS_A"

    def __post_init__(self):
        if self.cov_model not in COV_MODELS:
            raise ValueError(f"cov_model must be one of {COV_MODELS}")
        if not self.mh_scale > 0:
            raise ValueError("mh_scale must be positive")
        if self.sigma2_u <= 0 or self.rho <= 0:
            raise ValueError("sigma2_u and rho must be positive")
        if self.kernel != "exponential":
            raise ValueError("only the exponential kernel is implemented")
        if self.cov_model == "dense_kernel" and self.coords is None:
            raise ValueError("dense_kernel requires coords")
        if self.cov_model == "sparse_precision" and self.precision is None:
            raise ValueError("sparse_precision requires a precision(sigma2_u, rho) builder")
        if self.coords is not None:
            self.coords = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if self.Z is not None and not sparse.issparse(self.Z):
            self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))

    def n_effects(self, n: int) -> int:
        if self.Z is None:
            return n
        return self.Z.shape[1]

    def validate_for(self, n: int):
        q = self.n_effects(n)
        if self.Z is not None and self.Z.shape[0] != n:
            raise ValueError(f"Z has {self.Z.shape[0]} rows, expected {n}")
        if self.coords is not None and self.coords.shape[0] != q:
            raise ValueError(f"coords has {self.coords.shape[0]} rows, expected {q}")
        if self.Z is not None and q < n and not sparse.issparse(self.Z):
            if np.linalg.matrix_rank(self.Z) < q:
                raise ValueError("Z must have full column rank")


@dataclass
class PosteriorDraws:
    """Saved draws (rows are iterations)."""

    beta: np.ndarray
    dispersion: np.ndarray
    family: str
    u: np.ndarray | None = None
    vartheta: np.ndarray | None = None
    seed: int | None = None
    chain_id: int = 0
    burnin: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.beta.shape[0] == 0:
            raise ValueError("no draws were saved")

    @property
    def M(self) -> int:
        return self.beta.shape[0]

    @property
    def dispersion_name(self) -> str:
        return "lambda" if self.family == "cobin" else "psi"

    def columns(self, include_u: bool = True) -> dict[str, np.ndarray]:
        cols = {f"beta{j}": self.beta[:, j] for j in range(self.beta.shape[1])}
        cols[self.dispersion_name] = self.dispersion
        if self.vartheta is not None:
            cols["sigma2_u"] = self.vartheta[:, 0]
            cols["rho"] = self.vartheta[:, 1]
        if include_u and self.u is not None:
            cols.update({f"u{j}": self.u[:, j] for j in range(self.u.shape[1])})
        return cols


@dataclass
class AugmentedState:
    """Current latent state: KG draws, dispersions and the implied working response."""

    kappa: np.ndarray
    lambda_vec: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if np.any(self.kappa <= 0):
            raise ValueError("kappa must be positive")

    @property
    def b(self) -> np.ndarray:
        return self.lambda_vec * (self.y - 0.5)

    @property
    def y_tilde(self) -> np.ndarray:
        return self.b / self.kappa


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------

def _categorical(logw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Index draws from rows of unnormalized log weights (inverse CDF, one uniform each)."""
    logw = np.atleast_2d(logw)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    cum = np.cumsum(w, axis=1)
    u = rng.random(logw.shape[0]) * cum[:, -1]
    return np.minimum((cum < u[:, None]).sum(axis=1), logw.shape[1] - 1)


def beta_conditional(X, kappa, b, prior_precision):
    """Mean and lower Cholesky factor of the precision of (beta | kappa, lam).

    Precision ``X' K X + Sigma^-1``, mean ``(X' K X + Sigma^-1)^-1 X' b`` with
    ``b_i = lam_i (y_i - 1/2)``.
    """
    A = (X * kappa[:, None]).T @ X + prior_precision
    L = linalg.cholesky(A, lower=True)
    mean = linalg.cho_solve((L, True), X.T @ b)
    return mean, L


def _gaussian_from_precision(mean, L, rng):
    z = rng.standard_normal(mean.size)
    return mean + linalg.solve_triangular(L, z, lower=True, trans="T")


def _lambda_step(H, log_prior, eta, y, rng):
    """lam | beta for cobin: categorical over 1..L."""
    L = H.shape[1]
    lam = np.arange(1, L + 1)
    kernel = float(np.sum(eta * y - log_partition(eta)))
    logw = log_prior + H.sum(axis=0) + lam * kernel
    return int(_categorical(logw[None, :], rng)[0]) + 1


def _lambda_vec_step(H, psi, eta, y, rng):
    """lam_i | beta, psi for micobin: weights l (1-psi)^(l-1) p_cobin(y_i; eta_i, l)."""
    L = H.shape[1]
    lam = np.arange(1, L + 1)
    kern = eta * y - log_partition(eta)
    logw = np.log(lam) + (lam - 1) * math.log1p(-psi) + H + kern[:, None] * lam[None, :]
    return _categorical(logw, rng) + 1


def _psi_step(lam_vec, prior: PriorSpec, rng):
    a, b = prior.psi_prior
    n = lam_vec.size
    return float(rng.beta(a + 2 * n, b - n + lam_vec.sum()))


def _validate(model: RegressionModel, prior: PriorSpec, iters: int, burnin: int):
    if model.link != "cobit":
        raise ValueError("Gibbs samplers require the canonical cobit link")
    if iters <= burnin:
        raise ValueError("iters must exceed burnin")
    if burnin < 0:
        raise ValueError("burnin must be nonnegative")


# ---------------------------------------------------------------------------
# Fixed-effects samplers
# ---------------------------------------------------------------------------

def gibbs_cobin(model: RegressionModel, prior: PriorSpec | None = None, iters: int = 6000,
                burnin: int = 1000, rng: np.random.Generator | None = None,
                beta0=None, seed: int | None = None,
                kg_cfg: EnvelopeConfig | None = None) -> PosteriorDraws:
    """Blocked Gibbs sampler for cobin regression with unknown ``lam``.

    One cycle: lam | beta (categorical), kappa_i | lam, beta ~ KG(lam, x_i'beta),
    beta | lam, kappa Gaussian.  Responses at 0 or 1 restrict ``lam`` to 1.
    """
    prior = prior or PriorSpec()
    rng = rng if rng is not None else np.random.default_rng(seed)
    kg_cfg = kg_cfg or EnvelopeConfig()
    _validate(model, prior, iters, burnin)
    X, y = model.X, model.y
    n, p = X.shape
    H = log_h_table(y, prior.L)
    log_prior = prior.log_lambda_prior()
    Pb = prior.beta_precision(p)
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    keep = iters - burnin
    out_beta = np.empty((keep, p))
    out_lam = np.empty(keep)
    for it in range(iters):
        eta = X @ beta
        lam = _lambda_step(H, log_prior, eta, y, rng)
        kappa = sample_kg_many(np.full(n, lam), eta, rng, kg_cfg)
        try:
            mean, L = beta_conditional(X, kappa, lam * (y - 0.5), Pb)
        except linalg.LinAlgError as exc:
            raise SamplerError(f"Cholesky failure in beta step at iteration {it}: {exc}") from None
        beta = _gaussian_from_precision(mean, L, rng)
        if it >= burnin:
            out_beta[it - burnin] = beta
            out_lam[it - burnin] = lam
    return PosteriorDraws(out_beta, out_lam, "cobin", seed=seed, burnin=burnin)


def gibbs_micobin(model: RegressionModel, prior: PriorSpec | None = None, iters: int = 6000,
                  burnin: int = 1000, rng: np.random.Generator | None = None,
                  beta0=None, seed: int | None = None,
                  kg_cfg: EnvelopeConfig | None = None) -> PosteriorDraws:
    """Blocked Gibbs sampler for micobin regression.

    One cycle: lam_i | beta, psi (categorical per observation), kappa_i ~
    KG(lam_i, x_i'beta), beta | kappa, lam Gaussian, psi | lam ~
    Beta(a + 2n, b - n + sum lam_i).
    """
    prior = prior or PriorSpec()
    rng = rng if rng is not None else np.random.default_rng(seed)
    kg_cfg = kg_cfg or EnvelopeConfig()
    _validate(model, prior, iters, burnin)
    X, y = model.X, model.y
    n, p = X.shape
    H = log_h_table(y, prior.L)
    Pb = prior.beta_precision(p)
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    psi = 0.5
    keep = iters - burnin
    out_beta = np.empty((keep, p))
    out_psi = np.empty(keep)
    for it in range(iters):
        eta = X @ beta
        lam_vec = _lambda_vec_step(H, psi, eta, y, rng)
        kappa = sample_kg_many(lam_vec, eta, rng, kg_cfg)
        try:
            mean, L = beta_conditional(X, kappa, lam_vec * (y - 0.5), Pb)
        except linalg.LinAlgError as exc:
            raise SamplerError(f"Cholesky failure in beta step at iteration {it}: {exc}") from None
        beta = _gaussian_from_precision(mean, L, rng)
        psi = _psi_step(lam_vec, prior, rng)
        if it >= burnin:
            out_beta[it - burnin] = beta
            out_psi[it - burnin] = psi
    return PosteriorDraws(out_beta, out_psi, "micobin", seed=seed, burnin=burnin)


# ---------------------------------------------------------------------------
# Mixed model
# ---------------------------------------------------------------------------

class _RandomEffects:
    """Covariance bookkeeping and precision factorizations for one MixedModelSpec."""

    def __init__(self, spec: MixedModelSpec, n: int, prior: PriorSpec):
        self.spec = spec
        self.prior = prior
        self.n = n
        self.q = spec.n_effects(n)
        Z = spec.Z
        self.Z = None if Z is None else (sparse.csr_matrix(Z) if sparse.issparse(Z) else Z)
        self.indicator = Z is None or self._is_indicator(Z)
        self._dense_cache: dict[float, tuple[np.ndarray, float]] = {}
        self._sparse_logdet_cache: dict[tuple[float, float], float] = {}

    @staticmethod
    def _is_indicator(Z) -> bool:
        nnz = (Z != 0).sum(axis=1)
        return bool(np.all(np.asarray(nnz).ravel() <= 1))

    # products with Z
    def zt(self, v):
        return v if self.Z is None else self.Z.T @ v

    def z(self, v):
        return v if self.Z is None else self.Z @ v

    def ztkz(self, kappa):
        if self.Z is None:
            return kappa
        if sparse.issparse(self.Z):
            return (self.Z.T @ sparse.diags(kappa) @ self.Z).tocsc()
        return (self.Z.T * kappa) @ self.Z

    # prior covariance pieces
    def _dense_corr(self, rho: float):
        hit = self._dense_cache.get(rho)
        if hit is None:
            R = exponential_correlation(self.spec.coords, self.spec.coords, rho)
            f = DenseFactor(R)
            Rinv = f.solve(np.eye(self.q))
            hit = ((Rinv + Rinv.T) / 2, f.logdet)
            if not self.spec.free_rho:
                self._dense_cache[rho] = hit
        return hit

    def logdet_sigma(self, s2: float, rho: float) -> float:
        cm = self.spec.cov_model
        if cm == "dense_kernel":
            return self.q * math.log(s2) + self._dense_corr(rho)[1]
        if cm == "iid":
            return self.q * math.log(s2)
        if self.spec.precision_logdet is not None:
            return -float(self.spec.precision_logdet(s2, rho))
        key = (s2, rho)
        if key not in self._sparse_logdet_cache:
            if len(self._sparse_logdet_cache) >= 4:
                self._sparse_logdet_cache.pop(next(iter(self._sparse_logdet_cache)))
            self._sparse_logdet_cache[key] = -SparseFactor(self.spec.precision(s2, rho),
                                                           self.spec.ordering).logdet
        return self._sparse_logdet_cache[key]

    def factor(self, kappa, s2: float, rho: float):
        """Factor P = Sigma^-1 + Z' K Z."""
        cm = self.spec.cov_model
        ztkz = self.ztkz(kappa)
        if cm == "iid" and self.indicator:
            d = ztkz if self.Z is None else np.asarray(ztkz.diagonal() if sparse.issparse(ztkz)
                                                       else np.diag(ztkz))
            return DiagonalFactor(1.0 / s2 + d)
        if cm == "dense_kernel":
            P = self._dense_corr(rho)[0] / s2
            if self.Z is None:
                P = P.copy()
                P[np.diag_indices(self.q)] += ztkz
            else:
                P = P + (ztkz.toarray() if sparse.issparse(ztkz) else ztkz)
            return DenseFactor(P)
        Q = (sparse.identity(self.q, format="csc") / s2 if cm == "iid"
             else sparse.csc_matrix(self.spec.precision(s2, rho)))
        if self.Z is None:
            P = Q + sparse.diags(ztkz)
        else:
            P = Q + sparse.csc_matrix(ztkz)
        return SparseFactor(P, self.spec.ordering)

    def log_prior(self, s2: float, rho: float) -> float:
        if self.spec.vartheta_logprior is not None:
            return float(self.spec.vartheta_logprior(s2, rho))
        # half-Cauchy on sigma_u; rho uniform on rho_bounds when free
        lp = -math.log1p(s2 / self.prior.sigma_u_prior ** 2)
        if self.spec.free_rho:
            lo, hi = self.prior.rho_bounds
            if not lo < rho < hi:
                return -math.inf
        return lp


def _collapsed_loglik(re: _RandomEffects, F, w, s2, rho) -> float:
    """log L(vartheta) up to a constant, with u integrated out."""
    return -0.5 * (re.logdet_sigma(s2, rho) + F.logdet) + 0.5 * float(w @ F.solve(w))


def gibbs_mixed(model: RegressionModel, prior: PriorSpec | None, spec: MixedModelSpec,
                family: str = "cobin", iters: int = 6000, burnin: int = 1000,
                rng: np.random.Generator | None = None, seed: int | None = None,
                beta0=None, save_u: bool = True,
                kg_cfg: EnvelopeConfig | None = None) -> PosteriorDraws:
    """Partially collapsed Gibbs sampler for ``eta = X beta + Z u``.

    One cycle:

    1. dispersion: lam | beta, u (cobin) or lam_i | beta, u, psi (micobin);
    2. kappa_i ~ KG(lam_i, eta_i);
    3. beta | kappa, lam, vartheta with u integrated out: precision
       ``X'KX - C'P^-1 C + Sigma_beta^-1`` and linear term ``X'b - C'P^-1 Z'b``
       where ``C = Z'KX`` and ``b_i = lam_i (y_i - 1/2)``;
    4. vartheta by random-walk Metropolis on ``log sigma2_u`` (and
       ``log rho`` if free) against the collapsed likelihood
       ``-1/2 (log|Sigma| + log|P|) + 1/2 w'P^-1 w``, ``w = Z'(b - KX beta)``;
    5. u | rest ~ N(P^-1 w, P^-1);
    6. psi | lam (micobin).
    """
    prior = prior or PriorSpec()
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    kg_cfg = kg_cfg or EnvelopeConfig()
    _validate(model, prior, iters, burnin)
    X, y = model.X, model.y
    n, p = X.shape
    spec.validate_for(n)
    re = _RandomEffects(spec, n, prior)
    q = re.q
    H = log_h_table(y, prior.L)
    log_lprior = prior.log_lambda_prior()
    Pb = prior.beta_precision(p)

    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    u = np.zeros(q)
    s2, rho = float(spec.sigma2_u), float(spec.rho)
    psi = 0.5
    log_step = math.log(spec.mh_scale)
    n_acc = 0
    keep = iters - burnin
    out_beta = np.empty((keep, p))
    out_disp = np.empty(keep)
    out_theta = np.empty((keep, 2))
    out_u = np.empty((keep, q)) if save_u else None

    for it in range(iters):
        try:
            eta = X @ beta + re.z(u)
            if family == "cobin":
                lam = _lambda_step(H, log_lprior, eta, y, rng)
                lam_vec = np.full(n, lam)
            else:
                lam_vec = _lambda_vec_step(H, psi, eta, y, rng)
            kappa = sample_kg_many(lam_vec, eta, rng, kg_cfg)
            b = lam_vec * (y - 0.5)
            ztb = re.zt(b)
            KX = X * kappa[:, None]
            C = re.zt(KX)
            C = C.toarray() if sparse.issparse(C) else np.asarray(C)
            F = re.factor(kappa, s2, rho)

            # beta with u collapsed
            G = F.solve(C)
            A = X.T @ KX - C.T @ G + Pb
            rhs = X.T @ b - G.T @ ztb
            La = linalg.cholesky((A + A.T) / 2, lower=True)
            beta = _gaussian_from_precision(linalg.cho_solve((La, True), rhs), La, rng)

            # vartheta with u collapsed
            w = ztb - C @ beta
            cur = _collapsed_loglik(re, F, w, s2, rho) + re.log_prior(s2, rho) + math.log(s2)
            step = math.exp(log_step)
            s2_new = s2 * math.exp(step * rng.standard_normal())
            rho_new = rho * math.exp(step * rng.standard_normal()) if spec.free_rho else rho
            lp_new = re.log_prior(s2_new, rho_new)
            log_u = math.log(rng.random())
            if math.isfinite(lp_new):
                F_new = re.factor(kappa, s2_new, rho_new)
                prop = (_collapsed_loglik(re, F_new, w, s2_new, rho_new) + lp_new + math.log(s2_new)
                        + (math.log(rho_new) - math.log(rho) if spec.free_rho else 0.0))
                log_ratio = prop - cur
            else:
                log_ratio = -math.inf
            accept = log_u < log_ratio
            if accept:
                s2, rho, F = s2_new, rho_new, F_new
                n_acc += it >= burnin
            if spec.adapt and it < burnin:
                a_prob = math.exp(min(0.0, log_ratio))
                log_step += (a_prob - 0.4) / (it + 1) ** 0.6

            # u from its full conditional
            u = F.solve(w) + F.noise(rng.standard_normal(q))
        except (FactorError, linalg.LinAlgError) as exc:
            raise SamplerError(f"factorization failure at iteration {it}: {exc}") from None

        if family == "micobin":
            psi = _psi_step(lam_vec, prior, rng)
        if it >= burnin:
            j = it - burnin
            out_beta[j] = beta
            out_disp[j] = lam_vec[0] if family == "cobin" else psi
            out_theta[j] = (s2, rho)
            if save_u:
                out_u[j] = u
    meta = {"mh_acceptance": n_acc / keep, "mh_scale_final": math.exp(log_step)}
    return PosteriorDraws(out_beta, out_disp, family, u=out_u, vartheta=out_theta,
                          seed=seed, burnin=burnin, meta=meta)


# ---------------------------------------------------------------------------
# Chains and prediction
# ---------------------------------------------------------------------------

def run_chains(sampler: Callable, chains: int, seed: int, threads: int | None = None,
               **kwargs) -> list[PosteriorDraws]:
    """Run ``chains`` independent chains with streams spawned from ``seed``.

    ``threads`` (default ``COBIN_THREADS`` or 1) caps concurrency; results
    do not depend on it.
    """
    if threads is None:
        threads = int(os.environ.get("COBIN_THREADS", "1"))
    streams = np.random.SeedSequence(seed).spawn(chains)

    def one(k):
        d = sampler(rng=np.random.default_rng(streams[k]), **kwargs)
        d.seed, d.chain_id = seed, k
        return d

    if threads <= 1 or chains == 1:
        return [one(k) for k in range(chains)]
    with ThreadPoolExecutor(max_workers=min(threads, chains)) as pool:
        return list(pool.map(one, range(chains)))


def _psd_sqrt(C: np.ndarray) -> np.ndarray:
    vals, vecs = linalg.eigh((C + C.T) / 2)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def predict_at(draws: PosteriorDraws, spec: MixedModelSpec, X_new, coords_new,
               rng: np.random.Generator, return_draws: bool = False) -> dict:
    """Posterior predictive of ``mu(s*) = B'(x(s*)'beta + u(s*))`` at new locations.

    ``u(s*)`` is drawn jointly from its Gaussian conditional given the
    sampled training effects, one draw per saved iteration.
    """
    if draws.u is None or draws.vartheta is None:
        raise ValueError("draws must contain random effects and covariance parameters")
    if spec.coords is None:
        raise ValueError("prediction needs coordinates for the training effects")
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    coords_new = np.atleast_2d(np.asarray(coords_new, dtype=float))
    if coords_new.shape[1] != spec.coords.shape[1]:
        raise ValueError(f"coords_new has dimension {coords_new.shape[1]}, "
                         f"expected {spec.coords.shape[1]}")
    if X_new.shape[0] != coords_new.shape[0] or X_new.shape[1] != draws.beta.shape[1]:
        raise ValueError("X_new and coords_new do not match")
    m = coords_new.shape[0]
    M = draws.M
    eta = np.empty((M, m))
    cache: dict[float, tuple[np.ndarray, np.ndarray]] = {}
    for k in range(M):
        s2, rho = draws.vartheta[k]
        if rho not in cache:
            R = exponential_correlation(spec.coords, spec.coords, rho)
            Rs = exponential_correlation(spec.coords, coords_new, rho)
            Rss = exponential_correlation(coords_new, coords_new, rho)
            W = linalg.solve(R, Rs, assume_a="pos").T
            cache[rho] = (W, _psd_sqrt(Rss - W @ Rs))
        W, S = cache[rho]
        u_new = W @ draws.u[k] + math.sqrt(s2) * (S @ rng.standard_normal(m))
        eta[k] = X_new @ draws.beta[k] + u_new
    mu = bprime(eta)
    out = {"mean": mu.mean(axis=0), "sd": mu.std(axis=0, ddof=1) if M > 1 else np.zeros(m)}
    if return_draws:
        out["eta"] = eta
        out["mu"] = mu
        out["dispersion"] = draws.dispersion
    return out
