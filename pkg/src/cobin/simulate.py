"""Data generators and replicate runners for the robustness experiments.

Every generator draws ``y_i`` with conditional mean ``mu_i = g^-1(eta_i)``,
``eta_i = x_i' beta + u_i``.  Besides cobin and micobin, two deliberately
misspecified families are available:

* beta rectangular: with probability ``w(mu) = 1 - alpha (1 - |2 mu - 1|)``
  a beta draw with mean ``(mu - 1/2 + w/2) / w``, otherwise a uniform draw;
* beta mixture: beta components with means ``mu - eps``, ``mu``, ``mu + eps``
  and weights 1/4, 1/2, 1/4, where ``eps = min(mu, 1 - mu) / 2``.

Beta distributions are parametrized by mean and precision (the sum of the
two shape parameters).
"""
from __future__ import annotations

import logging
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg, special, stats

from .diagnostics import MetricReport, metrics
from .dist import (bprime, cobin_log_density, cobin_rvs, cobit_link, micobin_log_density,
                   micobin_rvs)
from .gibbs import MixedModelSpec, PriorSpec, exponential_correlation, gibbs_mixed, predict_at
from .glm import RegressionModel, irls_fit

__all__ = [
    "GENERATOR_FAMILIES",
    "SpatialSpec",
    "DataGeneratorSpec",
    "Dataset",
    "rectangular_weight",
    "mixture_offset",
    "generator_log_density",
    "generate",
    "replicate_rng",
    "Table1Config",
    "Table2Config",
    "run_table1",
    "run_table2",
    "summarize",
    "ExperimentResult",
]

log = logging.getLogger(__name__)

GENERATOR_FAMILIES = ("beta", "cobin", "beta_rectangular", "beta_mixture", "micobin")
DEFAULT_PHI = {"beta": 8.0, "beta_rectangular": 10.0, "beta_mixture": 40.0}
MIX_WEIGHTS = np.array([0.25, 0.5, 0.25])


@dataclass
class SpatialSpec:
    """Gaussian process random effects on uniform locations in the unit square."""

    sigma2_u: float = 1.0
    rho: float = 0.1
    kernel: str = "exponential"

    def __post_init__(self):
        if self.sigma2_u <= 0 or self.rho <= 0:
            raise ValueError("sigma2_u and rho must be positive")
        if self.kernel != "exponential":
            raise ValueError("only the exponential kernel is implemented")


@dataclass
class DataGeneratorSpec:
    family: str = "cobin"
    link: str = "cobit"
    beta_true: tuple = (0.0, 1.0)
    x_sd: float | None = None
    n: int = 100
    phi: float | None = None
    lam: int = 3
    alpha: float = 0.2
    psi: float = 0.5
    spatial: SpatialSpec | None = None
    n_test: int = 0

    def __post_init__(self):
        if self.family not in GENERATOR_FAMILIES:
            raise ValueError(f"family must be one of {GENERATOR_FAMILIES}")
        if self.link not in ("cobit", "logit"):
            raise ValueError("link must be 'cobit' or 'logit'")
        if self.x_sd is None:
            # the cobit link is three times flatter than logit at mu = 1/2
            self.x_sd = 3.0 if self.link == "cobit" else 1.0
        if self.phi is None:
            self.phi = DEFAULT_PHI.get(self.family, 8.0)
        self.beta_true = tuple(float(b) for b in self.beta_true)
        if len(self.beta_true) < 1:
            raise ValueError("beta_true needs at least an intercept")
        if self.n < 1 or self.n_test < 0:
            raise ValueError("n must be positive and n_test nonnegative")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.phi <= 0 or self.x_sd <= 0:
            raise ValueError("phi and x_sd must be positive")
        if int(self.lam) != self.lam or self.lam < 1:
            raise ValueError("lam must be a positive integer")
        if not 0.0 < self.psi < 1.0:
            raise ValueError("psi must lie in (0, 1)")
        if self.n_test and self.spatial is None:
            log.debug("test split without random effects")

    def mean_params(self) -> dict:
        return {"phi": self.phi, "lam": int(self.lam), "alpha": self.alpha, "psi": self.psi}


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    coords: np.ndarray | None = None
    u: np.ndarray | None = None
    test: "Dataset | None" = None

    @property
    def n(self) -> int:
        return self.y.size


def rectangular_weight(mu, alpha: float):
    """Beta-component weight ``w(mu, alpha) = 1 - alpha (1 - |2 mu - 1|)``."""
    return 1.0 - alpha * (1.0 - np.abs(2.0 * np.asarray(mu, dtype=float) - 1.0))


def mixture_offset(mu):
    """Mixture component spacing ``eps(mu) = min(mu, 1 - mu) / 2``."""
    mu = np.asarray(mu, dtype=float)
    return np.minimum(mu, 1.0 - mu) / 2.0


def _beta_logpdf(y, m, phi):
    return stats.beta.logpdf(y, m * phi, (1.0 - m) * phi)


def generator_log_density(y, mu, family: str, phi: float | None = None, lam: int = 3,
                          alpha: float = 0.2, psi: float = 0.5):
    """Log density of the generating distribution with mean ``mu`` at ``y``."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = DEFAULT_PHI.get(family, 8.0) if phi is None else phi
    if family == "beta":
        return _beta_logpdf(y, mu, phi)
    if family == "cobin":
        return cobin_log_density(y, cobit_link(mu), lam)
    if family == "micobin":
        return micobin_log_density(y, cobit_link(mu), psi)
    if family == "beta_rectangular":
        w = rectangular_weight(mu, alpha)
        m = (mu - 0.5 + 0.5 * w) / w
        return np.logaddexp(np.log(w) + _beta_logpdf(y, m, phi), np.log1p(-w))
    if family == "beta_mixture":
        eps = mixture_offset(mu)
        comps = [np.log(wk) + _beta_logpdf(y, mu + k * eps, phi)
                 for wk, k in zip(MIX_WEIGHTS, (-1, 0, 1))]
        return special.logsumexp(np.stack(comps), axis=0)
    raise ValueError(f"unknown family {family!r}")


def _draw_beta(rng, m, phi):
    y = rng.beta(m * phi, (1.0 - m) * phi)
    # keep draws strictly inside (0, 1) so every fitted family has finite density
    tiny = np.finfo(float).tiny
    return np.clip(y, tiny, 1.0 - np.finfo(float).epsneg)


def _draw_response(spec: DataGeneratorSpec, mu, theta, rng):
    n = mu.size
    fam, phi = spec.family, spec.phi
    if fam == "beta":
        return _draw_beta(rng, mu, phi)
    if fam == "cobin":
        return cobin_rvs(theta, int(spec.lam), rng)
    if fam == "micobin":
        return micobin_rvs(theta, spec.psi, rng)
    if fam == "beta_rectangular":
        w = rectangular_weight(mu, spec.alpha)
        m = (mu - 0.5 + 0.5 * w) / w
        from_beta = rng.random(n) < w
        y = rng.random(n)
        y[from_beta] = _draw_beta(rng, m[from_beta], phi)
        return y
    # beta mixture
    comp = rng.choice(3, size=n, p=MIX_WEIGHTS) - 1
    return _draw_beta(rng, mu + comp * mixture_offset(mu), phi)


def generate(spec: DataGeneratorSpec, rng: np.random.Generator) -> Dataset:
    """Simulate one dataset (plus a test split when ``spec.n_test > 0``).

    The design is an intercept plus independent N(0, x_sd^2) covariates.
    With ``spatial`` set, locations are uniform on the unit square and the
    random effects are a joint Gaussian process draw over training and test
    locations.
    """
    n_all = spec.n + spec.n_test
    p = len(spec.beta_true)
    X = np.column_stack([np.ones(n_all), spec.x_sd * rng.standard_normal((n_all, p - 1))])
    eta = X @ np.asarray(spec.beta_true)
    coords = u = None
    if spec.spatial is not None:
        coords = rng.random((n_all, 2))
        R = spec.spatial.sigma2_u * exponential_correlation(coords, coords, spec.spatial.rho)
        u = linalg.cholesky(R, lower=True) @ rng.standard_normal(n_all)
        eta = eta + u
    if spec.link == "cobit":
        theta = eta
        mu = bprime(eta)
    else:
        mu = special.expit(eta)
        theta = cobit_link(np.clip(mu, 1e-15, 1 - 1e-15))
    y = _draw_response(spec, np.asarray(mu, dtype=float), np.asarray(theta, dtype=float), rng)

    def part(sl):
        return Dataset(X[sl], np.asarray(y[sl], dtype=float), np.asarray(mu[sl], dtype=float),
                       np.asarray(eta[sl]), None if coords is None else coords[sl],
                       None if u is None else u[sl])

    train = part(slice(0, spec.n))
    if spec.n_test:
        train.test = part(slice(spec.n, n_all))
    return train


# ---------------------------------------------------------------------------
# Replicate runners
# ---------------------------------------------------------------------------

def replicate_rng(seed: int, cell: str, r: int) -> np.random.Generator:
    """Stream for replicate ``r`` of ``cell``; independent of which cells are run."""
    key = zlib.crc32(cell.encode())
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key, r)))


def _n_workers(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("COBIN_THREADS", "1"))
    return max(1, threads)


def _map(fn, items, threads):
    workers = _n_workers(threads)
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _mcse_mean(x):
    return float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")


def summarize(errors) -> dict:
    """Bias and RMSE of replicate errors with Monte Carlo standard errors.

    The RMSE standard error uses the delta method on the mean squared error.
    """
    e = np.asarray(errors, dtype=float)
    e = e[np.isfinite(e)]
    if e.size == 0:
        return {"bias": float("nan"), "rmse": float("nan"), "bias_mcse": float("nan"),
                "rmse_mcse": float("nan")}
    rmse = float(np.sqrt(np.mean(e ** 2)))
    mse_se = _mcse_mean(e ** 2)
    return {"bias": float(e.mean()), "rmse": rmse, "bias_mcse": _mcse_mean(e),
            "rmse_mcse": mse_se / (2 * rmse) if rmse > 0 else float("nan")}


@dataclass
class ExperimentResult:
    """Summary rows (one per table cell) and per-replicate records keyed by cell name."""

    summary: list[dict]
    cells: dict[str, list[dict]]


@dataclass
class Table1Config:
    """Fixed-effects robustness grid: IRLS cobin fit under four generators."""

    replicates: int = 200
    seed: int = 0
    families: tuple = ("beta", "cobin", "beta_rectangular", "beta_mixture")
    links: tuple = ("cobit", "logit")
    ns: tuple = (100, 400, 1600)
    beta_true: tuple = (0.0, 1.0)
    threads: int | None = None

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError("need at least two replicates")
        for f in self.families:
            if f not in GENERATOR_FAMILIES:
                raise ValueError(f"unknown family {f!r}")


def _table1_one(args):
    cfg, link, family, n, r = args
    cell = f"t1/{link}/{family}/{n}"
    rng = replicate_rng(cfg.seed, cell, r)
    data = generate(DataGeneratorSpec(family, link, cfg.beta_true, n=n), rng)
    try:
        fit = irls_fit(RegressionModel(data.X, data.y, link))
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        return float("nan"), f"{type(exc).__name__}: {exc}"
    return float(fit.beta_hat[1] - cfg.beta_true[1]), None


def run_table1(config: Table1Config) -> ExperimentResult:
    """Bias and RMSE of the cobin MLE of the slope for every (link, family, n) cell.

    Failed replicates are logged, excluded and counted in ``n_failed``.
    """
    cells = [(link, fam, n) for link in config.links for fam in config.families
             for n in config.ns]
    jobs = [(config, link, fam, n, r) for link, fam, n in cells
            for r in range(config.replicates)]
    results = _map(_table1_one, jobs, config.threads)
    rows = []
    records = {}
    R = config.replicates
    for k, (link, fam, n) in enumerate(cells):
        chunk = results[k * R:(k + 1) * R]
        errs = np.array([e for e, _ in chunk])
        failures = [msg for _, msg in chunk if msg is not None]
        for msg in failures:
            log.warning("table 1 %s/%s/n=%d: replicate failed: %s", link, fam, n, msg)
        row = {"link": link, "family": fam, "n": n, "replicates": R,
               "n_failed": len(failures)}
        row.update(summarize(errs))
        rows.append(row)
        records[f"{link}_{fam}_n{n}"] = [{"replicate": r, "error": e, "failure": msg or ""}
                                         for r, (e, msg) in enumerate(chunk)]
    return ExperimentResult(rows, records)


@dataclass
class Table2Config:
    """Spatial robustness experiment: beta-rectangular data, cobin and micobin fits."""

    replicates: int = 50
    seed: int = 0
    n_train: int = 200
    n_test: int = 50
    rho: float = 0.1
    sigma2_u: float = 1.0
    alpha: float = 0.2
    phi: float = 10.0
    families: tuple = ("cobin", "micobin")
    iters: int = 6000
    burnin: int = 1000
    beta_true: tuple = (0.0, 1.0)
    threads: int | None = None
    prior: PriorSpec = field(default_factory=PriorSpec)

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("need at least one replicate")
        for f in self.families:
            if f not in ("cobin", "micobin"):
                raise ValueError(f"cannot fit family {f!r}")


def _table2_one(args):
    cfg, r = args
    cell = f"t2/{cfg.rho}/{cfg.n_train}/{cfg.n_test}"
    rng = replicate_rng(cfg.seed, cell, r)
    spec = DataGeneratorSpec("beta_rectangular", "cobit", cfg.beta_true, x_sd=3.0,
                             n=cfg.n_train, phi=cfg.phi, alpha=cfg.alpha,
                             spatial=SpatialSpec(cfg.sigma2_u, cfg.rho), n_test=cfg.n_test)
    data = generate(spec, rng)
    fit_seeds = rng.spawn(len(cfg.families))
    out = {}
    for fam, frng in zip(cfg.families, fit_seeds):
        mspec = MixedModelSpec("dense_kernel", coords=data.coords, sigma2_u=1.0, rho=cfg.rho)
        t0 = time.perf_counter()
        try:
            draws = gibbs_mixed(RegressionModel(data.X, data.y), cfg.prior, mspec, fam,
                                cfg.iters, cfg.burnin, rng=frng)
            elapsed = time.perf_counter() - t0
            pred = predict_at(draws, mspec, data.test.X, data.test.coords, frng,
                              return_draws=True)
            rep = metrics(draws, data.test, fam, pred["eta"], beta_true=cfg.beta_true,
                          L=cfg.prior.L)
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            out[fam] = (None, f"{type(exc).__name__}: {exc}", float("nan"))
            continue
        out[fam] = (rep, None, elapsed)
    return out


def run_table2(config: Table2Config) -> ExperimentResult:
    """Bias/RMSE of the posterior mean slope, negtestLL, MSPE, mESS and time per family.

    Each row carries Monte Carlo standard errors (``*_mcse``) across
    replicates and the number of failed replicates.
    """
    results = _map(_table2_one, [(config, r) for r in range(config.replicates)],
                   config.threads)
    rows = []
    records = {}
    for fam in config.families:
        reps: list[MetricReport] = []
        times = []
        n_failed = 0
        cell = records[f"{fam}_rho{config.rho:g}_n{config.n_train}_{config.n_test}"] = []
        for r, res in enumerate(results):
            rep, msg, elapsed = res[fam]
            rec = {"replicate": r, "failure": msg or ""}
            rec.update({k: float("nan") for k in ("bias", "negtestLL", "mspe", "mess")}
                       if rep is None else {k: getattr(rep, k)
                                            for k in ("bias", "negtestLL", "mspe", "mess")})
            rec["time_sec"] = elapsed
            cell.append(rec)
            if rep is None:
                n_failed += 1
                log.warning("table 2 %s: replicate failed: %s", fam, msg)
                continue
            reps.append(rep)
            times.append(elapsed)
        row = {"family": fam, "rho": config.rho, "n_train": config.n_train,
               "n_test": config.n_test, "replicates": config.replicates, "n_failed": n_failed}
        row.update(summarize([r.bias for r in reps]))
        for name in ("negtestLL", "mspe", "mess"):
            vals = np.array([getattr(r, name) for r in reps], dtype=float)
            row[name] = float(vals.mean()) if vals.size else float("nan")
            row[f"{name}_mcse"] = _mcse_mean(vals)
        row["time_min"] = float(np.mean(times) / 60) if times else float("nan")
        rows.append(row)
    return ExperimentResult(rows, records)


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    d.pop("threads", None)
    if "prior" in d:
        d["prior"] = {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                      for k, v in d["prior"].items()}
    return d
