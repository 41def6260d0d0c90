import json

import numpy as np
import pytest

from cobin import cli
from cobin.dist import cobin_rvs
from cobin.gibbs import SamplerError, exponential_correlation


def write_data(path, n=40, seed=0, spatial=True, with_y=True):
    rng = np.random.default_rng(seed)
    s = rng.random((n, 2))
    x = rng.normal(size=n)
    u = np.linalg.cholesky(exponential_correlation(s, s, 0.2)) @ rng.standard_normal(n)
    cols = {"x1": x}
    if spatial:
        cols.update(s1=s[:, 0], s2=s[:, 1])
    if with_y:
        cols["y"] = cobin_rvs(x + (u if spatial else 0), 3, rng)
    cli.write_csv(path, cols)
    return path


def snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_missing_seed_and_bad_cutoff_reported_together(tmp_path):
    data = write_data(tmp_path / "d.csv")
    with pytest.raises(cli.ConfigError) as info:
        cli.parse_and_validate(["fit", "--data", str(data), "--out", str(tmp_path / "o"),
                                "--kg-cutoff", "0.3"])
    msgs = " ".join(info.value.errors)
    assert len(info.value.errors) == 2
    assert "--seed" in msgs and "kg-cutoff" in msgs


def test_config_validation_messages(tmp_path):
    cases = [
        (["fit", "--data", "nope.csv", "--seed", "1", "--out", "o"], "does not exist"),
        (["fit", "--data", "d.csv", "--seed", "1", "--out", "o", "--family", "micobin"],
         "requires --method gibbs"),
        (["fit", "--data", "d.csv", "--seed", "1", "--out", "o", "--method", "gibbs",
          "--iters", "10", "--burnin", "10"], "--iters"),
        (["simulate", "--table", "2", "--out", "o"], "--seed"),
        (["rng-test", "kg", "--n", "1", "--out", "o"], "--n"),
        (["fit", "--data", "d.csv", "--out", "o", "--bogus"], "unrecognized"),
    ]
    for argv, needle in cases:
        with pytest.raises(cli.ConfigError) as info:
            cli.parse_and_validate(argv, files={"d.csv": ""})
        assert needle in str(info.value)


def test_exit_codes(tmp_path, capsys, monkeypatch):
    assert cli.main(["fit", "--data", "missing.csv", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert err.count("config error") == 2

    def boom(cfg, timings):
        raise SamplerError("Cholesky failure in beta step at iteration 3")

    monkeypatch.setitem(cli.COMMANDS, "rng-test", boom)
    assert cli.main(["rng-test", "kg", "--out", str(tmp_path / "r")]) == 3
    assert "numerical failure [gibbs]" in capsys.readouterr().err


def test_rng_test_mean(tmp_path):
    out = tmp_path / "r"
    assert cli.main(["rng-test", "kg", "--c", "0", "--n", "200000", "--seed", "3",
                     "--out", str(out)]) == 0
    rep = json.loads((out / "rng_test.json").read_text())
    assert rep["exact_mean"] == pytest.approx(1 / 12)
    assert abs(rep["mean"] - 1 / 12) < 5 * rep["mean_se"]
    assert rep["mean_proposals"] <= 1.1456
    assert {"variance", "acceptance_rate", "ks_statistic", "ks_pvalue"} <= set(rep)


def test_fit_irls_and_em(tmp_path):
    data = write_data(tmp_path / "d.csv", n=200, spatial=False)
    for method in ("irls", "em"):
        out = tmp_path / method
        assert cli.main(["fit", "--data", str(data), "--method", method, "--seed", "1",
                         "--out", str(out)]) == 0
        fit = json.loads((out / "fit.json").read_text())
        assert set(fit["coefficients"]) == {"(Intercept)", "x1"}
        assert fit["converged"]
    a = json.loads((tmp_path / "irls" / "fit.json").read_text())["coefficients"]
    b = json.loads((tmp_path / "em" / "fit.json").read_text())["coefficients"]
    np.testing.assert_allclose(list(a.values()), list(b.values()), atol=1e-5)


@pytest.fixture
def gibbs_fit(tmp_path):
    data = write_data(tmp_path / "train.csv")
    mixed = tmp_path / "mixed.json"
    mixed.write_text(json.dumps({"cov_model": "dense_kernel", "rho": 0.2}))
    argv = ["fit", "--data", str(data), "--method", "gibbs", "--family", "micobin",
            "--mixed", str(mixed), "--iters", "120", "--burnin", "20", "--chains", "2",
            "--seed", "9", "--out", str(tmp_path / "fit")]
    assert cli.main(argv) == 0
    return tmp_path, argv


def test_gibbs_fit_outputs_and_replay(gibbs_fit):
    tmp, argv = gibbs_fit
    fit = tmp / "fit"
    header = (fit / "draws.csv").read_text().splitlines()
    assert header[0].startswith("chain,iter,beta0,beta1,psi,sigma2_u,rho,u0")
    assert len(header) == 1 + 2 * 100
    diag = json.loads((fit / "diagnostics.json").read_text())
    assert len(diag["split_rhat_beta"]) == 2 and len(diag["mess_beta"]) == 2
    meta = json.loads((fit / "metadata.json").read_text())
    assert meta["argv"] == argv and meta["seed"] == 9
    first = snapshot(fit)
    assert cli.main(argv) == 0
    assert snapshot(fit) == first
    replay = [a if a != str(fit) else str(tmp / "replay") for a in meta["argv"]]
    assert cli.main(replay) == 0
    assert (tmp / "replay" / "draws.csv").read_bytes() == first["draws.csv"]


def test_predict_and_diagnose(gibbs_fit):
    tmp, _ = gibbs_fit
    new = write_data(tmp / "new.csv", n=7, seed=4, with_y=False)
    out = tmp / "pred"
    assert cli.main(["predict", "--fit", str(tmp / "fit"), "--data", str(new),
                     "--seed", "2", "--out", str(out)]) == 0
    table = cli.read_table(out / "predictions.csv")
    assert list(table) == ["s1", "s2", "mean", "sd"]
    assert table["mean"].shape == (7,)
    assert np.all((table["mean"] > 0) & (table["mean"] < 1))
    first = snapshot(out)
    assert cli.main(["predict", "--fit", str(tmp / "fit"), "--data", str(new),
                     "--seed", "2", "--out", str(out)]) == 0
    assert snapshot(out) == first

    test = write_data(tmp / "test.csv", n=10, seed=5)
    dout = tmp / "diag"
    assert cli.main(["diagnose", "--fit", str(tmp / "fit"), "--test", str(test),
                     "--out", str(dout)]) == 0
    diag = json.loads((dout / "diagnostics.json").read_text())
    assert np.isfinite(diag["negtestLL"]) and np.isfinite(diag["waic"])
    assert cli.read_table(dout / "residuals.csv")["residual"].shape == (40,)


def test_simulate_table1_deterministic(tmp_path):
    argv = ["simulate", "--table", "1", "--replicates", "3", "--ns", "60", "--links", "cobit",
            "--families", "cobin", "beta", "--seed", "4", "--out", str(tmp_path / "s")]
    assert cli.main(argv) == 0
    first = snapshot(tmp_path / "s")
    assert "table1_summary.csv" in first
    assert cli.main(argv) == 0
    assert snapshot(tmp_path / "s") == first


def test_micobin_varying_refused(tmp_path):
    data = write_data(tmp_path / "d.csv")
    assert cli.main(["fit", "--data", str(data), "--method", "gibbs", "--family",
                     "micobin_varying", "--seed", "1", "--out", str(tmp_path / "o")]) == 2
