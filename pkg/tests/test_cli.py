import json

import numpy as np
import pytest

from drlrt.cli import main
from drlrt.simulate import DgpConfig, draw_dataset


@pytest.fixture
def toy(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("y,a\n0,1\n0,2\n")
    return str(path)


@pytest.fixture
def causal(tmp_path):
    d = draw_dataset(DgpConfig(0.1, 300, seed=4))
    path = tmp_path / "data.csv"
    cols = np.column_stack([d.Y, d.A, d.L])
    np.savetxt(path, cols, delimiter=",", header="y,a,l1,l2,l3,l4", comments="", fmt="%.17g")
    return str(path)


def _json(capsys):
    return json.loads(capsys.readouterr().out)


def test_toy_test(toy, capsys):
    assert main(["test", "-i", toy, "--nuisance", "identity", "--a0", "1", "--t0", "1"]) == 0
    out = _json(capsys)
    assert out["s_n"] == pytest.approx(2.0)
    assert out["lambda_hat"] == pytest.approx(1.0)
    assert out["mode"] == "noncausal"


def test_ci_nesting(causal, capsys):
    base = ["ci", "-i", causal, "--a0", "7", "--direction", "decreasing"]
    assert main(base + ["--alpha", "0.05"]) == 0
    wide = _json(capsys)
    assert main(base + ["--alpha", "0.10"]) == 0
    narrow = _json(capsys)
    assert wide["ci_lower"] <= narrow["ci_lower"] < narrow["ci_upper"] <= wide["ci_upper"]


def test_crossfit_ci(causal, capsys):
    argv = ["ci", "-i", causal, "--a0", "7", "--direction", "decreasing", "--K", "2",
            "--seed", "3", "--limit-n-mc", "500"]
    assert main(argv) == 0
    out = _json(capsys)
    assert out["K"] == 2 and out["ci_lower"] < out["ci_upper"]


def test_missing_column_is_data_error(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("y,b\n0,1\n0,2\n")
    assert main(["test", "-i", str(path), "--nuisance", "identity", "--a0", "1", "--t0", "1"]) == 2
    assert "'a'" in capsys.readouterr().err


def test_na_cell_is_data_error(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("y,a\n0,1\nNA,2\n")
    assert main(["test", "-i", str(path), "--nuisance", "identity", "--a0", "1", "--t0", "1"]) == 2


def test_query_below_support_is_data_error(toy):
    assert main(["test", "-i", toy, "--nuisance", "identity", "--a0", "0", "--t0", "1"]) == 2


def test_usage_errors(toy):
    assert main([]) == 1
    assert main(["test", "-i", toy, "--a0", "1"]) == 1
    assert main(["critvals", "--threads", "0"]) == 1


def test_critvals_table(capsys):
    assert main(["critvals", "--beta", "1", "--alpha", "0.95", "--policy", "table"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "beta,alpha,q,mc_se,n_mc,seed"
    beta, level, q, se, n_mc, _ = lines[1].split(",")
    assert float(q) == 2.25 and n_mc == "0"


def test_critvals_simulated_se_shrinks(capsys):
    main(["critvals", "--beta", "1", "--alpha", "0.9", "--n-mc", "100"])
    se_small = float(capsys.readouterr().out.splitlines()[1].split(",")[3])
    main(["critvals", "--beta", "1", "--alpha", "0.9", "--n-mc", "1600"])
    se_big = float(capsys.readouterr().out.splitlines()[1].split(",")[3])
    assert 0 < se_big < se_small


def test_pseudo_output(toy, capsys):
    assert main(["pseudo", "-i", toy, "--nuisance", "identity", "--a0", "1", "--t0", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "row,a,xi,theta_full,theta_null"
    assert lines[1].split(",")[-1] == "1"


def test_external_nuisance_cli(tmp_path, capsys):
    data = tmp_path / "d.csv"
    data.write_text("y,a\n1,0\n0,1\n3,2\n")
    nuis = tmp_path / "n.csv"
    nuis.write_text("row,mu_ii,g_ii,mbar\n0,0,1,0\n1,0,1,0\n2,0,1,0\n")
    argv = ["test", "-i", str(data), "--nuisance", "external", "--nuisance-file", str(nuis),
            "--a0", "1", "--t0", "0", "--bandwidth", "1"]
    assert main(argv) == 0
    ext = _json(capsys)
    assert main(["test", "-i", str(data), "--nuisance", "identity", "--variance", "kernel",
                 "--a0", "1", "--t0", "0", "--bandwidth", "1"]) == 0
    ident = _json(capsys)
    assert ext["s_n"] == ident["s_n"] and ext["kappa_hat"] == ident["kappa_hat"]


def test_simulate_smoke_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--smoke", "--seed", "5", "--out", str(a)]) == 0
    assert main(["simulate", "--smoke", "--seed", "5", "--threads", "4", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    manifest = json.loads((tmp_path / "a.manifest.json").read_text())
    assert manifest["spec"]["base_seed"] == 5


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DRLRT_SEED", "17")
    out = tmp_path / "x.csv"
    assert main(["simulate", "--smoke", "--eval-points", "7", "--out", str(out)]) == 0
    manifest = json.loads((tmp_path / "x.manifest.json").read_text())
    assert manifest["spec"]["base_seed"] == 17
