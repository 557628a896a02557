import json

import numpy as np
import pytest

from drlrt.errors import DataError
from drlrt.simulate import (
    DgpConfig,
    ExperimentSpec,
    c_fn,
    draw_dataset,
    outcome_mean,
    parse_scenario,
    run_experiment,
    true_theta,
    write_outputs,
)


def test_marginal_treatment_without_confounding():
    n = 4000
    d = draw_dataset(DgpConfig(0.0, n, seed=1))
    assert abs(d.A.mean() - 7.5) < 3 * 7.5 / np.sqrt(n)
    assert d.L.shape == (n, 4)


def test_outcome_mean_at_zero_confounders():
    a = np.array([-3.0, -1.0, 0.0, 0.7, 2.0, 9.0])
    got = outcome_mean(a, np.zeros((a.size, 4)), 0.1) - c_fn(a)
    np.testing.assert_allclose(got, 1 + 0.0025 * a * (1 - 0.2 * a ** 2))


def test_c_fn_shape():
    assert c_fn(0.0) == 0
    assert c_fn(1.5) == pytest.approx(-2.025)
    assert c_fn(-1.5) == pytest.approx(2.025)
    assert c_fn(10.0) == pytest.approx(-2.025)
    assert np.all(np.diff(c_fn(np.linspace(-5, 20, 500))) <= 0)


def test_true_theta_printed_values():
    assert true_theta(0.0, "printed") == 0.0
    assert true_theta(1.5, "printed") == pytest.approx(-2.0266875)
    assert true_theta(15.0, "printed") == pytest.approx(-3.7125)


def test_gcomputed_theta_is_confounder_average():
    rng = np.random.default_rng(2)
    L = rng.normal(size=(400_000, 4))
    for a in (0.0, 1.0, 7.0, 15.0):
        mc = outcome_mean(np.full(len(L), a), L, 0.2).mean()
        assert true_theta(a) == pytest.approx(mc, abs=0.01)
    assert true_theta(7.0) - true_theta(7.0, "printed") == pytest.approx(1 + 0.0025 * 7)


def test_parse_scenario():
    assert parse_scenario("model1-bothwell") == (0.1, "both_well")
    assert parse_scenario("model2-piwell") == (0.2, "pi_well_mu_mis")
    with pytest.raises(DataError):
        parse_scenario("model3-bothwell")


def test_spec_validation():
    with pytest.raises(DataError):
        ExperimentSpec(eval_points=(20.0,))
    with pytest.raises(DataError):
        ExperimentSpec(scenario="external")


def test_single_replication_rates_are_binary():
    spec = ExperimentSpec(n=200, n_mc=1, eval_points=(3.0, 7.0))
    res = run_experiment(spec)
    assert len(res.rows) == 2
    for row in res.rows:
        assert row["coverage"] in (0.0, 1.0) and row["level"] in (0.0, 1.0)


def test_outputs_identical_across_threads(tmp_path):
    spec = ExperimentSpec(n=200, n_mc=4, eval_points=(1.0, 7.0), base_seed=99)
    a = run_experiment(spec, threads=1)
    b = run_experiment(spec, threads=3)
    assert a.to_csv() == b.to_csv()
    write_outputs(a, tmp_path / "out.csv", tmp_path / "m.json")
    manifest = json.loads((tmp_path / "m.json").read_text())
    assert manifest["spec"]["base_seed"] == 99
    assert manifest["spec"]["n_mc"] == 4
    assert "version" in manifest
    header = (tmp_path / "out.csv").read_text().splitlines()[0]
    assert header.startswith("scenario,s,n,method,K,a,coverage")


def test_crossfit_method_runs():
    spec = ExperimentSpec(n=200, n_mc=2, eval_points=(7.0,), method="lrt_ss",
                          limit_n_mc=200)
    res = run_experiment(spec)
    assert res.rows[0]["K"] == 2
