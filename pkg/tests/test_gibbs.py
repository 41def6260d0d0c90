import numpy as np
import pytest
from scipy import linalg, sparse

from cobin.diagnostics import mess, split_rhat
from cobin.dist import cobin_rvs, log_h_table, log_partition, micobin_rvs
from cobin.gibbs import (MixedModelSpec, PriorSpec, _lambda_vec_step, _psi_step,
                         beta_conditional, default_lambda_prior, exponential_correlation,
                         gibbs_cobin, gibbs_micobin, gibbs_mixed, predict_at, run_chains)
from cobin.glm import RegressionModel


def grid_posterior_cobin(x, y, sigma2, grid, L=70):
    """Marginal posterior of a single slope on ``grid`` with lam summed out."""
    H = log_h_table(y, L).sum(axis=0)
    lp = np.log(default_lambda_prior(L))
    eta = grid[:, None] * x[None, :]
    kern = (eta * y - log_partition(eta)).sum(axis=1)
    lam = np.arange(1, L + 1)
    logj = lp[None, :] + H[None, :] + kern[:, None] * lam[None, :]
    m = logj.max(axis=1, keepdims=True)
    logpost = (m[:, 0] + np.log(np.exp(logj - m).sum(axis=1))) - grid ** 2 / (2 * sigma2)
    w = np.exp(logpost - logpost.max())
    return w / w.sum()


def binned_tv(draws, grid, mass, bins=25):
    cdf = np.cumsum(mass)
    edges = np.interp(np.linspace(0, 1, bins + 1)[1:-1], cdf, grid)
    edges = np.concatenate([[-np.inf], edges, [np.inf]])
    p_grid = np.array([mass[(grid > lo) & (grid <= hi)].sum() for lo, hi in zip(edges[:-1], edges[1:])])
    p_draw = np.histogram(draws, edges)[0] / draws.size
    return 0.5 * np.abs(p_grid - p_draw).sum()


def one_slope_data(seed=3, n=20):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 2, n)
    return x, cobin_rvs(x, 3, rng)


@pytest.mark.parametrize("seed", range(5))
def test_beta_conditional_matches_weighted_regression(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(3, 7)), int(rng.integers(1, 3))
    X = rng.normal(size=(n, p))
    kappa = rng.gamma(2.0, 0.05, n)
    lam = rng.integers(1, 5, n)
    y = rng.random(n)
    b = lam * (y - 0.5)
    P0 = np.diag(rng.uniform(0.1, 2, p))
    mean, L = beta_conditional(X, kappa, b, P0)
    # Gaussian pseudo-data b / kappa with variances 1 / kappa
    W = np.diag(kappa)
    V = np.linalg.inv(X.T @ W @ X + P0)
    np.testing.assert_allclose(mean, V @ X.T @ W @ (b / kappa), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(L @ L.T, np.linalg.inv(V), rtol=1e-10)


class _Recorder:
    def beta(self, a, b):
        self.args = (a, b)
        return 0.5


def test_psi_step_parameters():
    r = _Recorder()
    _psi_step(np.array([1, 1, 1]), PriorSpec(), r)
    assert r.args == (8.0, 2.0)


def test_boundary_zero_forces_unit_lambda(rng):
    y = np.array([0.0, 0.3, 1.0, 0.7])
    H = log_h_table(y, 70)
    draws = np.array([_lambda_vec_step(H, 0.3, np.array([0.5, -1, 2, 0]), y, rng)
                      for _ in range(500)])
    assert np.all(draws[:, [0, 2]] == 1)
    assert np.any(draws[:, 1] > 1)


def test_default_lambda_prior():
    w = default_lambda_prior()
    assert w.shape == (70,) and w.sum() == pytest.approx(1.0)
    assert np.all(np.diff(w) < 0)
    with pytest.raises(ValueError):
        PriorSpec(lambda_prior=np.ones(70))
    with pytest.raises(ValueError):
        PriorSpec(psi_prior=(0.0, 2.0))


def test_gibbs_matches_grid_posterior():
    x, y = one_slope_data()
    d = gibbs_cobin(RegressionModel(x[:, None], y), PriorSpec(sigma_beta=4.0),
                    iters=11_000, burnin=1000, seed=11)
    grid = np.linspace(-1, 3, 8001)
    mass = grid_posterior_cobin(x, y, 4.0, grid)
    assert binned_tv(d.beta[:, 0], grid, mass) < 0.05


def test_prior_only_run_returns_prior():
    d = gibbs_cobin(RegressionModel(np.zeros((0, 2)), np.zeros(0)), PriorSpec(sigma_beta=4.0),
                    iters=4000, burnin=0, seed=1)
    np.testing.assert_allclose(d.beta.mean(axis=0), 0, atol=0.2)
    np.testing.assert_allclose(d.beta.var(axis=0), 4, rtol=0.15)
    freq = np.bincount(d.dispersion.astype(int), minlength=71)[1:] / d.M
    assert abs(freq[0] - default_lambda_prior()[0]) < 5 * np.sqrt(0.3 * 0.7 / d.M)


def test_cobin_calibration():
    rng = np.random.default_rng(8)
    n = 400
    X = np.column_stack([np.ones(n), rng.normal(0, 1.5, n)])
    y = cobin_rvs(X @ [0.0, 1.0], 3, rng)
    chains = run_chains(gibbs_cobin, 3, seed=4, model=RegressionModel(X, y),
                        iters=1500, burnin=300)
    b = np.concatenate([c.beta for c in chains])
    assert abs(b[:, 1].mean() - 1) < 3 * b[:, 1].std()
    assert np.bincount(np.concatenate([c.dispersion for c in chains]).astype(int)).argmax() in (2, 3, 4)
    rhat = split_rhat(np.stack([c.beta for c in chains]))
    assert np.all(rhat < 1.01)


def test_micobin_calibration():
    rng = np.random.default_rng(9)
    n = 800
    X = np.column_stack([np.ones(n), rng.normal(0, 1.5, n)])
    y = micobin_rvs(X @ [0.0, 1.0], 0.5, rng)
    d = gibbs_micobin(RegressionModel(X, y), iters=1500, burnin=300, seed=2)
    assert abs(d.dispersion.mean() - 0.5) < 3 * d.dispersion.std()
    assert abs(d.beta[:, 1].mean() - 1) < 3 * d.beta[:, 1].std()


def test_determinism():
    x, y = one_slope_data()
    model = RegressionModel(np.column_stack([np.ones_like(x), x]), y)
    a = gibbs_micobin(model, iters=200, burnin=50, seed=5)
    b = gibbs_micobin(model, iters=200, burnin=50, seed=5)
    assert a.beta.tobytes() == b.beta.tobytes()
    assert a.dispersion.tobytes() == b.dispersion.tobytes()


def test_run_chains_independent_of_threads():
    x, y = one_slope_data()
    model = RegressionModel(x[:, None], y)
    a = run_chains(gibbs_cobin, 3, seed=7, threads=1, model=model, iters=100, burnin=10)
    b = run_chains(gibbs_cobin, 3, seed=7, threads=3, model=model, iters=100, burnin=10)
    for ca, cb in zip(a, b):
        np.testing.assert_array_equal(ca.beta, cb.beta)
    assert not np.array_equal(a[0].beta, a[1].beta)


def spatial_data(seed, n=100, family="cobin"):
    rng = np.random.default_rng(seed)
    coords = rng.random((n, 2))
    R = exponential_correlation(coords, coords, 0.1)
    u = np.linalg.cholesky(R) @ rng.standard_normal(n)
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    eta = X @ [0.0, 1.0] + u
    y = cobin_rvs(eta, 3, rng) if family == "cobin" else micobin_rvs(eta, 0.5, rng)
    return RegressionModel(X, y), coords


@pytest.mark.parametrize("family", ["cobin", "micobin"])
def test_dense_and_sparse_paths_identical(family):
    model, coords = spatial_data(1, family=family)
    R = exponential_correlation(coords, coords, 0.1)
    Rinv = linalg.inv(R)
    Rinv = (Rinv + Rinv.T) / 2
    dense = MixedModelSpec("dense_kernel", coords=coords)
    sp = MixedModelSpec("sparse_precision", coords=coords, ordering="NATURAL",
                        precision=lambda s2, rho: sparse.csc_matrix(Rinv / s2))
    a = gibbs_mixed(model, None, dense, family, iters=150, burnin=50, seed=3)
    b = gibbs_mixed(model, None, sp, family, iters=150, burnin=50, seed=3)
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-8)
    np.testing.assert_allclose(a.vartheta, b.vartheta, rtol=1e-8)


def test_degenerate_random_effect_matches_fixed_effects():
    rng = np.random.default_rng(12)
    n = 60
    X = np.column_stack([np.ones(n), rng.normal(0, 1.5, n)])
    model = RegressionModel(X, cobin_rvs(X @ [0.2, 1.0], 4, rng))
    tiny = 1e-8
    spec = MixedModelSpec("iid", sigma2_u=tiny, adapt=False, mh_scale=1e-3,
                          vartheta_logprior=lambda s2, rho: -(np.log(s2 / tiny)) ** 2 / 2e-4)
    a = gibbs_mixed(model, None, spec, "cobin", iters=4000, burnin=500, seed=1)
    b = gibbs_cobin(model, iters=4000, burnin=500, seed=2)
    assert np.all(a.vartheta[:, 0] < 1e-7)
    se2 = a.beta.var(axis=0) / mess(a.beta) + b.beta.var(axis=0) / mess(b.beta)
    assert np.all(np.abs(a.beta.mean(axis=0) - b.beta.mean(axis=0)) < 4 * np.sqrt(se2))


def test_predict_at_training_location_and_zero_effects(rng):
    model, coords = spatial_data(2)
    spec = MixedModelSpec("dense_kernel", coords=coords)
    d = gibbs_mixed(model, None, spec, iters=120, burnin=20, seed=4)
    out = predict_at(d, spec, model.X[:3], coords[:3], rng, return_draws=True)
    u_pred = out["eta"] - d.beta @ model.X[:3].T
    np.testing.assert_allclose(u_pred, d.u[:, :3], atol=1e-6)

    d.beta[:] = 0.0
    d.u[:] = 0.0
    d.vartheta[:, 0] = 1e-30
    out = predict_at(d, spec, np.zeros((2, 2)), [[0.5, 0.5], [2.0, 2.0]], rng)
    np.testing.assert_allclose(out["mean"], 0.5, atol=1e-12)
    with pytest.raises(ValueError, match="dimension"):
        predict_at(d, spec, np.zeros((1, 2)), [[0.5, 0.5, 0.5]], rng)


def test_config_errors():
    with pytest.raises(ValueError, match="mh_scale"):
        MixedModelSpec("iid", mh_scale=0.0)
    with pytest.raises(ValueError, match="coords"):
        MixedModelSpec("dense_kernel")
    model = RegressionModel(np.ones((4, 1)), [0.2, 0.4, 0.5, 0.6], link="logit")
    with pytest.raises(ValueError, match="cobit"):
        gibbs_cobin(model, iters=10, burnin=0)
