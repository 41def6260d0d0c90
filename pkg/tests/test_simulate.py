import math

import numpy as np
import pytest
from scipy import integrate, stats

from cobin.simulate import (DataGeneratorSpec, SpatialSpec, Table1Config, Table2Config,
                            config_dict, generate, generator_log_density, replicate_rng,
                            run_table1, run_table2, summarize)

MEAN_FAMILIES = ["beta", "beta_rectangular", "beta_mixture", "cobin", "micobin"]


@pytest.mark.parametrize("family", MEAN_FAMILIES[:4])
@pytest.mark.parametrize("mu", [0.2, 0.5, 0.73])
def test_generator_mean_preserved(family, mu):
    f = lambda y: math.exp(generator_log_density(y, mu, family))  # noqa: E731
    pts = [k / 12 for k in range(1, 12)]
    total = integrate.quad(f, 0, 1, points=pts, limit=400)[0]
    mean = integrate.quad(lambda y: y * f(y), 0, 1, points=pts, limit=400)[0]
    assert total == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(mu, abs=1e-8)


@pytest.mark.parametrize("family", MEAN_FAMILIES)
def test_generated_mean_clt(family):
    rng = np.random.default_rng(17)
    n = 20_000
    spec = DataGeneratorSpec(family, "cobit", beta_true=(0.0,), n=n)
    d = generate(spec, rng)
    np.testing.assert_allclose(d.mu, 0.5)
    assert abs(d.y.mean() - 0.5) < 5 * d.y.std() / math.sqrt(n)
    assert np.all((d.y >= 0) & (d.y <= 1))
    if family.startswith("beta"):
        assert np.all((d.y > 0) & (d.y < 1))


def test_rectangular_small_alpha_is_beta():
    rng = np.random.default_rng(4)
    spec = DataGeneratorSpec("beta_rectangular", beta_true=(-0.8,), n=20_000, alpha=1e-9)
    d = generate(spec, rng)
    m, phi = d.mu[0], spec.phi
    assert stats.kstest(d.y, stats.beta(m * phi, (1 - m) * phi).cdf).pvalue > 1e-3


def test_links_and_design():
    rng = np.random.default_rng(0)
    a = generate(DataGeneratorSpec("beta", "logit", n=500), rng)
    np.testing.assert_allclose(a.mu, 1 / (1 + np.exp(-a.X @ [0, 1])), rtol=1e-12)
    np.testing.assert_allclose(a.eta, a.X @ [0, 1])
    b = generate(DataGeneratorSpec("beta", "cobit", n=2000), rng)
    assert b.X[:, 1].std() == pytest.approx(3.0, rel=0.1)
    np.testing.assert_allclose(a.X[:, 0], 1.0)


def test_spatial_split():
    rng = np.random.default_rng(1)
    spec = DataGeneratorSpec("beta_rectangular", n=30, n_test=10, spatial=SpatialSpec())
    d = generate(spec, rng)
    assert d.n == 30 and d.test.n == 10
    assert d.coords.shape == (30, 2) and d.test.coords.shape == (10, 2)
    np.testing.assert_allclose(d.eta, d.X @ [0, 1] + d.u, rtol=1e-12)


def test_spec_validation():
    for kw in ({"family": "gamma"}, {"link": "probit"}, {"alpha": 0.0}, {"lam": 1.5},
               {"psi": 1.0}, {"n": 0}):
        with pytest.raises(ValueError):
            DataGeneratorSpec(**kw)


def test_replicate_streams():
    a = replicate_rng(1, "t1/cobit/beta/100", 3).random(4)
    b = replicate_rng(1, "t1/cobit/beta/100", 3).random(4)
    c = replicate_rng(1, "t1/cobit/beta/100", 4).random(4)
    d = replicate_rng(1, "t1/logit/beta/100", 3).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c) and not np.allclose(a, d)


def test_summarize():
    s = summarize([0.1, -0.1, 0.3, float("nan")])
    assert s["bias"] == pytest.approx(0.1)
    assert s["rmse"] == pytest.approx(math.sqrt(0.11 / 3))
    assert s["bias_mcse"] == pytest.approx(np.std([0.1, -0.1, 0.3], ddof=1) / math.sqrt(3))
    assert math.isnan(summarize([])["bias"])


def test_table1_small_reproducible_and_thread_invariant():
    cfg = Table1Config(replicates=4, seed=3, families=("beta", "cobin"), links=("cobit",),
                       ns=(50,), threads=1)
    a = run_table1(cfg)
    b = run_table1(Table1Config(**{**config_dict(cfg), "threads": 2}))
    assert len(a.summary) == 2
    assert a.summary == b.summary
    assert a.cells == b.cells
    # a cell's stream does not depend on which other cells are run
    c = run_table1(Table1Config(replicates=4, seed=3, families=("cobin",), links=("cobit",),
                                ns=(50,)))
    assert c.cells["cobit_cobin_n50"] == a.cells["cobit_cobin_n50"]


def test_table2_small():
    cfg = Table2Config(replicates=2, seed=1, n_train=40, n_test=10, iters=120, burnin=20)
    res = run_table2(cfg)
    assert [r["family"] for r in res.summary] == ["cobin", "micobin"]
    for row in res.summary:
        for key in ("bias", "rmse", "negtestLL", "mspe", "mess"):
            assert np.isfinite(row[key])
    strip = lambda rows: [{k: v for k, v in r.items() if k != "time_min"} for r in rows]  # noqa: E731
    assert strip(res.summary) == strip(run_table2(cfg).summary)
