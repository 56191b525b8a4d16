"""Tests for CSV/JSON serialization and the command-line surface."""
import json

import numpy as np
import pytest

from saemifa import cli, io
from saemifa.model import ItemParameters


def test_load_responses_basic(tmp_path):
    f = tmp_path / "y.csv"
    f.write_text("0,1\n1,0\n")
    y = io.load_responses_csv(f)
    assert y.n_examinees == 2 and y.n_items == 2 and y.n_categories == 2


def test_load_responses_header_skip(tmp_path):
    f = tmp_path / "y.csv"
    f.write_text("item1,item2\n0,1\n1,0\n")
    y = io.load_responses_csv(f, has_header=True)
    assert y.n_examinees == 2


def test_load_responses_parse_error_names_cell(tmp_path):
    f = tmp_path / "y.csv"
    f.write_text("0,1\n1,x\n")
    with pytest.raises(io.ParseError, match="row 2, column 2"):
        io.load_responses_csv(f)


def _params(guessing=False):
    rng = np.random.default_rng(0)
    tau = np.sort(rng.standard_normal((4, 3)), axis=1)
    tau -= tau.mean(axis=1, keepdims=True)
    if guessing:
        return ItemParameters(loadings=rng.uniform(0.5, 1.5, (4, 1)),
                              intercepts=rng.standard_normal(4),
                              thresholds=np.zeros((4, 1)),
                              guessing=rng.uniform(0.05, 0.3, 4))
    return ItemParameters(loadings=rng.uniform(0.5, 1.5, (4, 2)),
                          intercepts=rng.standard_normal(4), thresholds=tau)


def test_params_roundtrip_exact(tmp_path):
    for guessing in (False, True):
        p = _params(guessing)
        path = tmp_path / f"params_{guessing}.csv"
        io.write_params_csv(p, path)
        q = io.read_params_csv(path)
        assert np.array_equal(q.loadings, p.loadings)
        assert np.array_equal(q.intercepts, p.intercepts)
        assert np.array_equal(q.thresholds, p.thresholds)
        if guessing:
            assert np.array_equal(q.guessing, p.guessing)


def test_spectral_report_sorted_eigenvalues():
    rng = np.random.default_rng(1)
    v = rng.standard_normal((500, 6))
    rep = io.spectral_report(v.T @ v / 500, 500)
    eigs = rep["eigenvalues"]
    assert eigs == sorted(eigs, reverse=True)
    assert set(rep) >= {"significant_cov", "significant_corr", "ratios", "alpha"}


def _write_small_dataset(path, n=400, j=8, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.8, 1.5, (j, 1))
    b = rng.standard_normal(j) * 0.5
    theta = rng.standard_normal((n, 1))
    y = ((theta @ a.T - b + rng.standard_normal((n, j))) > 0).astype(int)
    np.savetxt(path, y, fmt="%d", delimiter=",")
    return y


@pytest.fixture(scope="module")
def fit_outputs(tmp_path_factory):
    """One CLI fit shared across the artifact-content tests."""
    tmp = tmp_path_factory.mktemp("cli_fit")
    data = tmp / "y.csv"
    _write_small_dataset(data)
    out = tmp / "fit"
    cfg = tmp / "cfg.json"
    cfg.write_text(json.dumps({"burn_in": 150, "max_iter": 2000}))
    code = cli.main(["--seed", "11", "--config", str(cfg), "fit",
                     "--input", str(data), "--q", "1", "--out", str(out)])
    return code, out


def test_cli_fit_exit_code_and_files(fit_outputs):
    code, out = fit_outputs
    assert code in (cli.EXIT_OK, cli.EXIT_NONCONVERGENCE)
    for name in ("params.csv", "spectral.json", "fit_stats.json", "trace.csv"):
        assert (out / name).exists()


def test_cli_fit_trace_rows_match_iterations(fit_outputs):
    _, out = fit_outputs
    stats = json.loads((out / "fit_stats.json").read_text())
    n_rows = len((out / "trace.csv").read_text().strip().splitlines()) - 1
    assert n_rows == stats["iterations_used"]
    assert {"logl", "aic", "bic", "dof", "converged"} <= set(stats)


def test_cli_seed_determinism(tmp_path):
    data = tmp_path / "y.csv"
    _write_small_dataset(data)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"burn_in": 100, "max_iter": 600}))
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        cli.main(["--seed", "5", "--config", str(cfg), "fit",
                  "--input", str(data), "--q", "1", "--out", str(out)])
        outs.append((out / "params.csv").read_bytes())
    assert outs[0] == outs[1]


def test_cli_validation_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,1\n1,x\n")
    code = cli.main(["fit", "--input", str(bad), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_VALIDATION


def test_cli_spectra(tmp_path, capsys):
    rng = np.random.default_rng(2)
    v = rng.standard_normal((1000, 5))
    s2 = v.T @ v / 1000
    f = tmp_path / "s2.csv"
    np.savetxt(f, s2, delimiter=",")
    code = cli.main(["spectra", "--input", str(f), "--n", "1000"])
    assert code == cli.EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["eigenvalues"]) == 5
    assert payload["n"] == 1000


def test_cli_errors_subcommand(tmp_path):
    data = tmp_path / "y.csv"
    _write_small_dataset(data, n=600, j=6, seed=3)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"burn_in": 150, "max_iter": 1500}))
    out = tmp_path / "err"
    code = cli.main(["--seed", "6", "--config", str(cfg), "errors",
                     "--input", str(data), "--q", "1",
                     "--method", "spce", "--out", str(out)])
    assert code in (cli.EXIT_OK, cli.EXIT_NONCONVERGENCE)
    payload = json.loads((out / "errors.json").read_text())
    assert payload["method"].startswith("SPCE")
    assert len(payload["se"]) == 12  # 6 items x (a, b)


def test_cli_scores_subcommand(tmp_path):
    data = tmp_path / "y.csv"
    _write_small_dataset(data, n=300, j=6, seed=4)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"burn_in": 120, "max_iter": 1200}))
    out = tmp_path / "scores"
    code = cli.main(["--seed", "7", "--config", str(cfg), "scores",
                     "--input", str(data), "--q", "1",
                     "--method", "eap", "--out", str(out)])
    assert code in (cli.EXIT_OK, cli.EXIT_NONCONVERGENCE)
    table = np.loadtxt(out / "scores.csv", delimiter=",", skiprows=1)
    assert table.shape == (300, 2)


def test_cli_simulate_subcommand(tmp_path):
    out = tmp_path / "sim"
    code = cli.main(["--seed", "8", "simulate", "--condition", "1",
                     "--reps", "1", "--n", "400", "--out", str(out)])
    assert code == cli.EXIT_OK
    assert (out / "true_params.csv").exists()
    assert (out / "responses_rep1.csv").exists()
    recovery = json.loads((out / "recovery.json").read_text())
    assert recovery["condition"] == 1
    assert recovery["deviations"]["n"]["used"] == 400
