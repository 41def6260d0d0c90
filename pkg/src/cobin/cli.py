"""Command-line interface: ``cobin fit|simulate|rng-test|predict|diagnose``.

Every command writes ``metadata.json`` into its output directory with the
full argument vector, so ``cobin <metadata argv>`` reproduces the outputs
byte for byte.  Wall-clock timings are written only with ``--timing``.

Exit status: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import (mess, negtest_ll, pointwise_log_density, quantile_residuals,
                          split_rhat, waic)
from .dist import NumericalInstabilityError, bprime
from .gibbs import (MixedModelSpec, PosteriorDraws, PriorSpec, SamplerError, gibbs_cobin,
                    gibbs_micobin, gibbs_mixed, predict_at, run_chains)
from .glm import ConvergenceError, RegressionModel, em_map, irls_fit, profile_lambda
from .kg import (T_MAX, T_MIN, EnvelopeConfig, KGIterationError, kg1_cdf, kg_mean,
                 sample_kg1_many, sample_kg_many)

__all__ = ["ConfigError", "RunConfig", "parse_and_validate", "execute", "main"]

SCHEMA = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
FAMILIES = ("cobin", "micobin", "micobin_varying")
RESERVED = ("y", "s1", "s2", "mu")


class ConfigError(ValueError):
    """Invalid invocation; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = [errors] if isinstance(errors, str) else list(errors)
        super().__init__("; ".join(self.errors))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


@dataclass
class RunConfig:
    command: str
    args: dict
    argv: list
    mixed: dict | None = None
    prior: dict | None = None
    files: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.args.get("seed")

    @property
    def out(self) -> Path:
        return Path(self.args["out"])


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cobin", description="Cobin and micobin regression tools.")
    p.add_argument("--version", action="version", version=f"cobin {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, seed_default=None):
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--timing", action="store_true", help="record wall-clock time")
        sp.add_argument("--kg-cutoff", type=float, default=None,
                        help=f"KG series cutoff t, admissible in ({T_MIN:.4f}, {T_MAX})")

    f = sub.add_parser("fit", help="fit a regression model to a CSV dataset")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--family", choices=FAMILIES, default="cobin")
    f.add_argument("--method", choices=("irls", "em", "gibbs"), default="irls")
    f.add_argument("--link", choices=("cobit", "logit"), default="cobit")
    f.add_argument("--lam", type=int, default=None, help="fixed lambda for EM (default: profile)")
    f.add_argument("--mixed", default=None, help="random-effect specification JSON")
    f.add_argument("--prior", default=None, help="prior specification JSON")
    f.add_argument("--iters", type=int, default=6000)
    f.add_argument("--burnin", type=int, default=1000)
    f.add_argument("--chains", type=int, default=1)
    f.add_argument("--no-intercept", action="store_true")
    f.add_argument("--no-u", action="store_true", help="do not save random-effect draws")

    s = sub.add_parser("simulate", help="run a replicate experiment")
    common(s)
    s.add_argument("--table", type=int, choices=(1, 2), required=True)
    s.add_argument("--replicates", type=int, default=None)
    s.add_argument("--ns", type=int, nargs="+", default=None, help="sample sizes (table 1)")
    s.add_argument("--families", nargs="+", default=None)
    s.add_argument("--links", nargs="+", default=None, choices=("cobit", "logit"))
    s.add_argument("--rho", type=float, default=0.1)
    s.add_argument("--n-train", type=int, default=200)
    s.add_argument("--n-test", type=int, default=50)
    s.add_argument("--iters", type=int, default=6000)
    s.add_argument("--burnin", type=int, default=1000)

    r = sub.add_parser("rng-test", help="summarize draws from a random variate generator")
    common(r, seed_default=0)
    r.add_argument("dist", choices=("kg",))
    r.add_argument("--c", type=float, default=0.0)
    r.add_argument("--b", type=int, default=1)
    r.add_argument("--n", type=int, default=100_000)

    pr = sub.add_parser("predict", help="predict at new locations from a gibbs fit")
    common(pr)
    pr.add_argument("--fit", required=True, help="output directory of a gibbs fit")
    pr.add_argument("--data", required=True, help="CSV with s1, s2 and covariates")
    pr.add_argument("--save-draws", action="store_true")

    d = sub.add_parser("diagnose", help="convergence and fit diagnostics for a saved fit")
    common(d, seed_default=0)
    d.add_argument("--fit", required=True)
    d.add_argument("--test", default=None, help="held-out CSV (y, s1, s2, covariates, optional mu)")
    return p


def _read_json(path, errors, what):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        errors.append(f"{what}: cannot read {path}: {exc.strerror}")
        return None
    except json.JSONDecodeError as exc:
        errors.append(f"{what}: invalid JSON in {path}: {exc}")
        return None
    if not isinstance(obj, dict):
        errors.append(f"{what}: {path} must contain a JSON object")
        return None
    return obj


MIXED_KEYS = {"cov_model", "sigma2_u", "rho", "free_rho", "mh_scale", "adapt", "kernel"}
PRIOR_KEYS = {"sigma_beta", "L", "psi_prior", "sigma_u_prior", "lambda_prior", "rho_bounds"}


def parse_and_validate(argv, files=None) -> RunConfig:
    """Parse ``argv`` into a :class:`RunConfig`, reporting every violation at once.

    ``files`` optionally maps paths to contents so validation can run
    without touching the file system (only existence is checked).
    """
    argv = list(argv)
    parser = _build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise ConfigError("a command is required: fit, simulate, rng-test, predict or diagnose")
    a = vars(ns)
    errors = []

    def exists(path):
        return (files is not None and path in files) or os.path.exists(path)

    if ns.command in ("fit", "simulate") and ns.seed is None:
        errors.append(f"--seed is required for {ns.command} (no implicit entropy)")
    if ns.kg_cutoff is not None and not T_MIN < ns.kg_cutoff < T_MAX:
        errors.append(f"--kg-cutoff {ns.kg_cutoff} is outside the admissible range "
                      f"({T_MIN:.4f}, {T_MAX}) where the series terms decrease monotonically")
    for key in ("data", "fit", "test"):
        path = a.get(key)
        if path is not None and not exists(path):
            errors.append(f"--{key}: {path} does not exist")
    mixed = prior = None
    if ns.command == "fit":
        if ns.method == "em" and (ns.family != "cobin" or ns.link != "cobit"):
            errors.append("--method em supports only --family cobin with --link cobit")
        if ns.method == "gibbs" and ns.link != "cobit":
            errors.append("--method gibbs requires --link cobit")
        if ns.method != "gibbs" and ns.family != "cobin":
            errors.append(f"--family {ns.family} requires --method gibbs")
        if ns.method != "gibbs" and ns.mixed:
            errors.append("--mixed requires --method gibbs")
        if ns.lam is not None and ns.lam < 1:
            errors.append("--lam must be a positive integer")
        if ns.iters <= ns.burnin or ns.burnin < 0:
            errors.append("--iters must exceed --burnin, and --burnin must be nonnegative")
        if ns.chains < 1:
            errors.append("--chains must be at least 1")
        if ns.mixed:
            mixed = _read_json(ns.mixed, errors, "--mixed")
            if mixed is not None:
                bad = set(mixed) - MIXED_KEYS
                if bad:
                    errors.append(f"--mixed: unknown keys {sorted(bad)}")
                if mixed.get("cov_model", "dense_kernel") not in ("dense_kernel", "iid"):
                    errors.append("--mixed: cov_model must be dense_kernel or iid "
                                  "(sparse precisions are available from the library)")
                if mixed.get("mh_scale", 0.5) <= 0:
                    errors.append("--mixed: mh_scale must be positive")
                for k in ("sigma2_u", "rho"):
                    if k in mixed and not mixed[k] > 0:
                        errors.append(f"--mixed: {k} must be positive")
        if ns.prior:
            prior = _read_json(ns.prior, errors, "--prior")
            if prior is not None and set(prior) - PRIOR_KEYS:
                errors.append(f"--prior: unknown keys {sorted(set(prior) - PRIOR_KEYS)}")
    elif ns.command == "simulate":
        if ns.replicates is not None and ns.replicates < (2 if ns.table == 1 else 1):
            errors.append("--replicates is too small")
        if ns.iters <= ns.burnin or ns.burnin < 0:
            errors.append("--iters must exceed --burnin, and --burnin must be nonnegative")
        if ns.rho <= 0:
            errors.append("--rho must be positive")
        if ns.n_train < 2 or ns.n_test < 1:
            errors.append("--n-train must be at least 2 and --n-test at least 1")
    elif ns.command == "rng-test":
        if ns.n < 2:
            errors.append("--n must be at least 2")
        if ns.b < 1:
            errors.append("--b must be a positive integer")
        if not math.isfinite(ns.c):
            errors.append("--c must be finite")
    if errors:
        raise ConfigError(errors)
    return RunConfig(ns.command, a, argv, mixed, prior, dict(files or {}))


# ---------------------------------------------------------------------------
# I/O helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def write_csv(path: Path, columns: dict):
    names = list(columns)
    cols = [np.asarray(columns[k]) for k in names]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(len(cols[0]) if cols else 0):
            fh.write(",".join(_fmt(c[i]) for c in cols) + "\n")


def write_rows(path: Path, rows: list[dict]):
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    write_csv(path, {k: [r[k] for r in rows] for k in rows[0]})


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path: Path, obj: dict):
    body = {"schema": SCHEMA}
    body.update(obj)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(body), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_table(path) -> dict[str, np.ndarray]:
    """Read a numeric CSV with a header row into named float columns."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if not header or header == [""]:
            raise ConfigError(f"{path}: missing header row")
        body = np.loadtxt(fh, delimiter=",", ndmin=2)
    if body.size and body.shape[1] != len(header):
        raise ConfigError(f"{path}: header has {len(header)} columns, rows have {body.shape[1]}")
    if body.size == 0:
        raise ConfigError(f"{path}: no data rows")
    return {name.strip(): body[:, j] for j, name in enumerate(header)}


def _design(table: dict, intercept: bool = True):
    names = [k for k in table if k not in RESERVED]
    cols = [table[k] for k in names]
    n = len(next(iter(table.values())))
    if intercept:
        cols.insert(0, np.ones(n))
        names.insert(0, "(Intercept)")
    if not cols:
        raise ConfigError("no covariates and no intercept")
    return np.column_stack(cols), names


def _coords(table: dict, path):
    if "s1" not in table or "s2" not in table:
        raise ConfigError(f"{path}: spatial models need columns s1 and s2")
    return np.column_stack([table["s1"], table["s2"]])


def _prior(cfg: RunConfig) -> PriorSpec:
    kw = dict(cfg.prior or {})
    if "psi_prior" in kw:
        kw["psi_prior"] = tuple(kw["psi_prior"])
    if "rho_bounds" in kw:
        kw["rho_bounds"] = tuple(kw["rho_bounds"])
    if "lambda_prior" in kw:
        kw["lambda_prior"] = np.asarray(kw["lambda_prior"], dtype=float)
    try:
        return PriorSpec(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"--prior: {exc}") from None


def _mixed_spec(mixed: dict, coords) -> MixedModelSpec:
    kw = dict(mixed)
    cov = kw.pop("cov_model", "dense_kernel")
    try:
        return MixedModelSpec(cov, coords=coords if cov == "dense_kernel" else None, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"--mixed: {exc}") from None


def _kg_cfg(cfg: RunConfig) -> EnvelopeConfig:
    t = cfg.args.get("kg_cutoff")
    return EnvelopeConfig() if t is None else EnvelopeConfig(t)


def _metadata(cfg: RunConfig, extra: dict | None = None) -> dict:
    config = {k: v for k, v in cfg.args.items() if k != "timing"}
    digest = hashlib.sha256(json.dumps(_clean(config), sort_keys=True).encode()).hexdigest()
    meta = {"command": cfg.command, "argv": cfg.argv, "config": config, "seed": cfg.seed,
            "version": __version__, "numpy": np.__version__, "config_sha256": digest}
    if cfg.mixed is not None:
        meta["mixed"] = cfg.mixed
    if cfg.prior is not None:
        meta["prior"] = cfg.prior
    meta.update(extra or {})
    return meta


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_fit(cfg: RunConfig, timings: dict):
    a = cfg.args
    if a["family"] == "micobin_varying":
        raise ConfigError("micobin_varying (observation-specific dispersion) is a model type "
                          "only; its sampler needs Polya-Gamma augmentation and is not provided")
    table = read_table(a["data"])
    if "y" not in table:
        raise ConfigError(f"{a['data']}: missing response column y")
    X, names = _design(table, not a["no_intercept"])
    try:
        model = RegressionModel(X, table["y"], a["link"])
    except ValueError as exc:
        raise ConfigError(f"{a['data']}: {exc}") from None
    out = cfg.out
    if a["method"] in ("irls", "em"):
        if a["method"] == "irls":
            fit = irls_fit(model)
            lam = a["lam"] if a["lam"] is not None else profile_lambda(model, fit.beta_hat)
        else:
            lam = a["lam"] if a["lam"] is not None else profile_lambda(model)
            fit = em_map(model, lam)
        result = {"method": a["method"], "coefficients": dict(zip(names, fit.beta_hat)),
                  "lambda_hat": lam, "iterations": fit.iterations, "converged": fit.converged,
                  "loglik_kernel": fit.loglik, "grad_norm": fit.grad_norm}
        write_json(out / "fit.json", result)
        return
    prior = _prior(cfg)
    kg_cfg = _kg_cfg(cfg)
    common = dict(model=model, prior=prior, iters=a["iters"], burnin=a["burnin"], kg_cfg=kg_cfg)
    spec = None
    if cfg.mixed is not None:
        coords = _coords(table, a["data"]) if cfg.mixed.get("cov_model", "dense_kernel") == \
            "dense_kernel" else None
        spec = _mixed_spec(cfg.mixed, coords)
        chains = run_chains(gibbs_mixed, a["chains"], a["seed"], spec=spec, family=a["family"],
                            save_u=not a["no_u"], **common)
    else:
        sampler = gibbs_cobin if a["family"] == "cobin" else gibbs_micobin
        chains = run_chains(sampler, a["chains"], a["seed"], **common)
    cols = {"chain": np.concatenate([np.full(d.M, d.chain_id) for d in chains]),
            "iter": np.concatenate([np.arange(d.M) for d in chains])}
    for k in chains[0].columns():
        cols[k] = np.concatenate([d.columns()[k] for d in chains])
    write_csv(out / "draws.csv", cols)
    write_json(out / "diagnostics.json", _draw_diagnostics(chains, model, spec))
    timings["coefficient_names"] = names


def _draw_diagnostics(chains: list[PosteriorDraws], model=None, spec=None) -> dict:
    B = np.stack([d.beta for d in chains])
    diag = {"draws_per_chain": chains[0].M, "chains": len(chains),
            "posterior_mean_beta": B.reshape(-1, B.shape[2]).mean(axis=0),
            "posterior_sd_beta": B.reshape(-1, B.shape[2]).std(axis=0, ddof=1),
            "mess_beta": [mess(d.beta) for d in chains]}
    if len(chains) > 1:
        diag["split_rhat_beta"] = split_rhat(B)
    if chains[0].meta:
        diag["sampler"] = [d.meta for d in chains]
    if model is not None:
        d = chains[0]
        eta = d.beta @ model.X.T
        if d.u is not None:
            eta = eta + (d.u if spec is None or spec.Z is None else d.u @ np.asarray(spec.Z).T)
        if d.u is not None or spec is None:
            ld = pointwise_log_density(model.y, eta, d.dispersion, d.family)
            diag["waic"] = waic(ld)
    return diag


def _load_fit(fit_dir) -> tuple[dict, list[PosteriorDraws]]:
    fit_dir = Path(fit_dir)
    meta_path, draws_path = fit_dir / "metadata.json", fit_dir / "draws.csv"
    if not meta_path.exists() or not draws_path.exists():
        raise ConfigError(f"{fit_dir} is not the output directory of a gibbs fit")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("command") != "fit" or meta["config"].get("method") != "gibbs":
        raise ConfigError(f"{fit_dir} does not hold gibbs draws")
    cols = read_table(draws_path)
    family = meta["config"]["family"]
    disp_name = "lambda" if family == "cobin" else "psi"
    bnames = sorted((k for k in cols if k.startswith("beta")), key=lambda s: int(s[4:]))
    unames = sorted((k for k in cols if k.startswith("u") and k[1:].isdigit()),
                    key=lambda s: int(s[1:]))
    chains = []
    for c in np.unique(cols["chain"]).astype(int):
        m = cols["chain"] == c
        u = np.column_stack([cols[k][m] for k in unames]) if unames else None
        vt = (np.column_stack([cols["sigma2_u"][m], cols["rho"][m]])
              if "sigma2_u" in cols else None)
        chains.append(PosteriorDraws(np.column_stack([cols[k][m] for k in bnames]),
                                     cols[disp_name][m], family, u=u, vartheta=vt,
                                     seed=meta.get("seed"), chain_id=int(c)))
    return meta, chains


def _cmd_predict(cfg: RunConfig, timings: dict):
    a = cfg.args
    meta, chains = _load_fit(a["fit"])
    if "mixed" not in meta or meta["mixed"].get("cov_model", "dense_kernel") != "dense_kernel":
        raise ConfigError("predict needs a gibbs fit with a dense_kernel --mixed specification")
    if chains[0].u is None:
        raise ConfigError("the fit was run with --no-u; random-effect draws are required")
    train = read_table(meta["config"]["data"])
    spec = _mixed_spec(meta["mixed"], _coords(train, meta["config"]["data"]))
    new = read_table(a["data"])
    coords_new = _coords(new, a["data"])
    X_new, _ = _design(new, not meta["config"]["no_intercept"])
    X_train, _ = _design(train, not meta["config"]["no_intercept"])
    if X_new.shape[1] != X_train.shape[1]:
        raise ConfigError(f"{a['data']}: covariates do not match the training data")
    rng = np.random.default_rng(a["seed"])
    preds = [predict_at(d, spec, X_new, coords_new, rng, return_draws=True) for d in chains]
    mu = np.concatenate([p["mu"] for p in preds])
    write_csv(cfg.out / "predictions.csv",
              {"s1": coords_new[:, 0], "s2": coords_new[:, 1], "mean": mu.mean(axis=0),
               "sd": mu.std(axis=0, ddof=1)})
    if a["save_draws"]:
        write_csv(cfg.out / "predictive_eta.csv",
                  {f"eta{j}": col for j, col in enumerate(np.concatenate([p["eta"] for p in preds]).T)})


def _cmd_diagnose(cfg: RunConfig, timings: dict):
    a = cfg.args
    meta, chains = _load_fit(a["fit"])
    train = read_table(meta["config"]["data"])
    intercept = not meta["config"]["no_intercept"]
    X, _ = _design(train, intercept)
    model = RegressionModel(X, train["y"])
    spec = None
    if "mixed" in meta:
        coords = (_coords(train, meta["config"]["data"])
                  if meta["mixed"].get("cov_model", "dense_kernel") == "dense_kernel" else None)
        spec = _mixed_spec(meta["mixed"], coords)
    out = _draw_diagnostics(chains, model, spec)
    # quantile residuals at the posterior mean linear predictor and dispersion
    d = chains[0]
    eta = d.beta @ X.T
    if d.u is not None:
        eta = eta + d.u
    eta_hat = eta.mean(axis=0)
    disp = (int(np.round(np.median(d.dispersion))) if d.family == "cobin"
            else float(d.dispersion.mean()))
    res = quantile_residuals(model.y, eta_hat, disp, d.family)
    write_csv(cfg.out / "residuals.csv", {"y": model.y, "eta_hat": eta_hat, "residual": res})
    fin = res[np.isfinite(res)]
    out["quantile_residuals"] = {"min": fin.min(), "max": fin.max(), "mean": fin.mean(),
                                 "sd": fin.std(ddof=1) if fin.size > 1 else 0.0,
                                 "n_infinite": int(res.size - fin.size)}
    if a["test"]:
        if spec is None or spec.coords is None or d.u is None:
            raise ConfigError("--test needs a dense_kernel spatial fit with saved random effects")
        test = read_table(a["test"])
        Xt, _ = _design(test, intercept)
        rng = np.random.default_rng(a["seed"])
        pred = predict_at(d, spec, Xt, _coords(test, a["test"]), rng, return_draws=True)
        ld = pointwise_log_density(test["y"], pred["eta"], d.dispersion, d.family)
        out["negtestLL"] = negtest_ll(ld)
        if "mu" in test:
            out["mspe"] = float(np.mean((test["mu"] - bprime(pred["eta"]).mean(axis=0)) ** 2))
    write_json(cfg.out / "diagnostics.json", out)


def _cmd_rng_test(cfg: RunConfig, timings: dict):
    from scipy import stats

    a = cfg.args
    rng = np.random.default_rng(a["seed"])
    kg_cfg = _kg_cfg(cfg)
    n, b, c = a["n"], a["b"], a["c"]
    out = {"dist": "kg", "b": b, "c": c, "n": n, "cutoff": kg_cfg.t,
           "exact_mean": kg_mean(b, c)}
    if b == 1:
        x, outer, inner = sample_kg1_many(np.full(n, c), rng, kg_cfg, return_counts=True)
        out["acceptance_rate"] = 1.0 / float(outer.mean())
        out["mean_proposals"] = float(outer.mean())
        out["mean_series_terms"] = float(inner.sum() / outer.sum())
        ks = stats.kstest(x, lambda q: kg1_cdf(q, c))
        out["ks_statistic"], out["ks_pvalue"] = ks.statistic, ks.pvalue
    else:
        x = sample_kg_many(np.full(n, b), np.full(n, c), rng, kg_cfg)
    out["mean"] = float(x.mean())
    out["variance"] = float(x.var(ddof=1))
    out["mean_se"] = float(x.std(ddof=1) / math.sqrt(n))
    write_json(cfg.out / "rng_test.json", out)


def _cmd_simulate(cfg: RunConfig, timings: dict):
    from .simulate import Table1Config, Table2Config, config_dict, run_table1, run_table2

    a = cfg.args
    kw = {"seed": a["seed"]}
    if a["replicates"] is not None:
        kw["replicates"] = a["replicates"]
    if a["families"] is not None:
        kw["families"] = tuple(a["families"])
    try:
        if a["table"] == 1:
            if a["ns"] is not None:
                kw["ns"] = tuple(a["ns"])
            if a["links"] is not None:
                kw["links"] = tuple(a["links"])
            exp_cfg = Table1Config(**kw)
            res = run_table1(exp_cfg)
        else:
            kw.update(rho=a["rho"], n_train=a["n_train"], n_test=a["n_test"],
                      iters=a["iters"], burnin=a["burnin"])
            exp_cfg = Table2Config(**kw)
            res = run_table2(exp_cfg)
    except ValueError as exc:
        if isinstance(exc, NumericalInstabilityError):
            raise
        raise ConfigError(str(exc)) from None
    keep_time = a["timing"]
    for name, records in res.cells.items():
        rows = [{k: v for k, v in r.items() if keep_time or k != "time_sec"} for r in records]
        write_rows(cfg.out / f"table{a['table']}_{name}.csv", rows)
    summary = [{k: v for k, v in r.items() if keep_time or k != "time_min"} for r in res.summary]
    write_rows(cfg.out / f"table{a['table']}_summary.csv", summary)
    write_json(cfg.out / f"table{a['table']}_summary.json",
               {"experiment": config_dict(exp_cfg), "cells": summary})


COMMANDS = {"fit": _cmd_fit, "simulate": _cmd_simulate, "rng-test": _cmd_rng_test,
            "predict": _cmd_predict, "diagnose": _cmd_diagnose}


def execute(cfg: RunConfig) -> int:
    """Run a validated configuration; returns the process exit status."""
    cfg.out.mkdir(parents=True, exist_ok=True)
    timings: dict = {}
    t0 = time.perf_counter()
    COMMANDS[cfg.command](cfg, timings)
    extra = {}
    if "coefficient_names" in timings:
        extra["coefficient_names"] = timings.pop("coefficient_names")
    if cfg.args.get("timing"):
        extra["wall_seconds"] = time.perf_counter() - t0
    write_json(cfg.out / "metadata.json", _metadata(cfg, extra))
    return EXIT_OK


NUMERIC_ERRORS = (SamplerError, ConvergenceError, NumericalInstabilityError, KGIterationError,
                  np.linalg.LinAlgError, FloatingPointError, ArithmeticError)


def _tag(exc: BaseException) -> str:
    mod = type(exc).__module__.rsplit(".", 1)[-1]
    return mod if mod not in ("builtins", "__main__") else "cli"


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = parse_and_validate(argv)
        return execute(cfg)
    except ConfigError as exc:
        for msg in exc.errors:
            print(f"cobin: config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"cobin: numerical failure [{_tag(exc)}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"cobin: error [{_tag(exc)}]: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
