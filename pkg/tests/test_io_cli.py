from __future__ import annotations

import csv
import math
import shutil
import subprocess

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pyramid_qr import io
from pyramid_qr.cli import main, parse_args
from pyramid_qr.model import PQRModel
from pyramid_qr.sampler import McmcConfig, run_chain, summarize
from pyramid_qr.simulation import DesignSpec, generate_design


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def design_csv(tmp_path):
    y, X = generate_design(DesignSpec(1, 120, seed=7), 0)
    return _write_csv(tmp_path / "d1.csv", ["x", "y"], [[io.fmt(a), io.fmt(b)] for a, b in zip(X[:, 0], y)])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


FAST = ["--iters", "400", "--burnin", "100", "--thin", "2"]


# -- ingestion --------------------------------------------------------------------------

def test_ingest_two_rows(tmp_path):
    data, names = io.ingest_csv(_write_csv(tmp_path / "a.csv", ["y", "x"], [[1, 0], [2, 1]]))
    assert (data.N, data.P, names) == (2, 1, ["x"])


def test_ingest_nan_names_cell(tmp_path):
    p = _write_csv(tmp_path / "a.csv", ["y", "x"], [[1, 0], ["NaN", 1], [3, 2]])
    with pytest.raises(io.DataError, match=r"row 3, column 'y'"):
        io.ingest_csv(p)


def test_ingest_non_numeric_names_cell(tmp_path):
    p = _write_csv(tmp_path / "a.csv", ["y", "x"], [[1, 0], [2, "abc"]])
    with pytest.raises(io.DataError, match=r"row 3, column 'x': 'abc'"):
        io.ingest_csv(p)


def test_ingest_errors(tmp_path):
    with pytest.raises(io.DataError, match="no column named 'y'"):
        io.ingest_csv(_write_csv(tmp_path / "a.csv", ["z", "x"], [[1, 0], [2, 1]]))
    with pytest.raises(io.DataError, match="more rows than covariates"):
        io.ingest_csv(_write_csv(tmp_path / "b.csv", ["y", "x1", "x2"], [[1, 0, 1], [2, 1, 0]]))
    with pytest.raises(io.DataError, match="no such file"):
        io.ingest_csv(tmp_path / "missing.csv")
    with pytest.raises(io.DataError, match="cells"):
        io.ingest_csv(_write_csv(tmp_path / "c.csv", ["y", "x"], [[1, 0], [2]]))


def test_ingest_lidar_shaped(tmp_path):
    rng = np.random.default_rng(0)
    rng_x = np.linspace(390, 720, 221)
    y = -0.3 / (1 + np.exp(-(rng_x - 600) / 20)) + 0.05 * rng.standard_normal(221)
    data, _ = io.ingest_csv(_write_csv(tmp_path / "lidar.csv", ["range", "y"], zip(rng_x, y)))
    assert (data.N, data.P) == (221, 1)
    assert len(data.hull.vertices) == 2


@given(st.floats(allow_nan=False))
def test_fmt_round_trips(x):
    assert float(io.fmt(x)) == x


# -- sample files -----------------------------------------------------------------------

def test_samples_round_trip_reproduces_summary(tmp_path):
    y, X = generate_design(DesignSpec(1, 100, seed=1), 0)
    model = PQRModel.linear(io.Dataset.from_arrays(y, X), [0.1, 0.5, 0.9])
    s = run_chain(model, McmcConfig(iterations=300, burn_in=50, seed=3))
    io.write_samples(tmp_path / "s.csv", s)
    back = io.read_samples(tmp_path / "s.csv")
    for name in ("Q", "mu", "sigma", "logpost", "coefficients"):
        assert np.array_equal(getattr(back, name), getattr(s, name))
    assert back.coefficient_names == s.coefficient_names
    assert summarize(back) == summarize(s)
    io.write_summary(tmp_path / "sum.csv", summarize(s))
    assert io.read_summary(tmp_path / "sum.csv") == summarize(s)


def test_sample_columns_deterministic(tmp_path):
    y, X = generate_design(DesignSpec(1, 60, seed=1), 0)
    model = PQRModel.linear(io.Dataset.from_arrays(y, X), [0.25, 0.75])
    s = run_chain(model, McmcConfig(iterations=50, burn_in=10, seed=3))
    assert io.sample_columns(s) == [
        "chain", "draw", "logpost", "Q0_tau0.25", "Q0_tau0.75", "Q1_tau0.25", "Q1_tau0.75",
        "mu0", "mu1", "sigma0", "sigma1", "beta0_tau0.25", "beta0_tau0.75", "beta1_tau0.25", "beta1_tau0.75",
    ]


# -- command line -----------------------------------------------------------------------

def test_fit_writes_consistent_files(design_csv, tmp_path):
    out = tmp_path / "out"
    assert main(["fit", str(design_csv), "--out", str(out), "--chains", "2", *FAST]) == 0
    samples = _rows(out / "samples.csv")
    summary = _rows(out / "summary.csv")
    lines = _rows(out / "quantile_lines.csv")
    stored = len(range(100, 400, 2))
    assert len(samples) == 1 + 2 * stored
    assert {r[0] for r in samples[1:]} == {"0", "1"}
    assert summary[0] == io.SUMMARY_HEADER and len(summary) == 1 + 2 * 3
    assert lines[0] == ["covariate", "x", "tau", "mean", "lower", "upper"] and len(lines) == 1 + 100 * 3
    report = (out / "report.txt").read_text()
    assert "N: 120 P: 1" in report and "R-hat" in report
    # summary is reproduced bit-identically from the samples file
    assert io.read_summary(out / "summary.csv") == summarize(io.read_samples(out / "samples.csv"))


def test_fit_is_byte_reproducible(design_csv, tmp_path):
    for name in ("a", "b"):
        assert main(["fit", str(design_csv), "--out", str(tmp_path / name), "--seed", "5", *FAST]) == 0
    for f in ("samples.csv", "summary.csv", "quantile_lines.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_spline_fit(tmp_path):
    rng = np.random.default_rng(3)
    x = np.sort(rng.uniform(0, 10, 150))
    y = np.sin(x) + 0.2 * rng.standard_normal(150)
    p = _write_csv(tmp_path / "s.csv", ["x", "y"], zip(x, y))
    out = tmp_path / "out"
    assert main(["spline-fit", str(p), "--out", str(out), "--knots", "5", *FAST]) == 0
    summary = _rows(out / "summary.csv")
    assert len(summary) == 1 + 5 * 3
    assert summary[1][0] == "knot0"


def test_extreme_fit_uses_exceedances_only(tmp_path):
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, 200)
    y = np.where(rng.uniform(size=200) < 0.5, 80 + 10 * rng.uniform(size=200), 96 + rng.exponential(10, 200))
    k = int(np.sum(y > 96))
    p = _write_csv(tmp_path / "e.csv", ["y", "x"], zip(y, x))
    out = tmp_path / "out"
    assert main(["extreme-fit", str(p), "--threshold", "96", "--out", str(out), *FAST]) == 0
    assert f"exceedances: {k} of 200 rows" in (out / "report.txt").read_text()
    samples = io.read_samples(out / "samples.csv")
    assert np.all(samples.mu == 96.0) and samples.xi is not None


def test_bench_smoke(tmp_path, capsys):
    out = tmp_path / "bench"
    rc = main(["bench", "--design", "1", "--replicates", "2", "--iters", "500", "--burnin", "100",
               "--n", "60", "--out", str(out)])
    assert rc == 0
    rows = _rows(out / "bench_rmse.csv")
    assert rows[0] == ["tau", "method", "beta0", "beta1"]
    assert all(math.isfinite(float(v)) for r in rows[1:] for v in r[2:])
    assert {r[1] for r in rows[1:]} == {"PQR", "check-loss"}
    assert len(_rows(out / "bench_coverage.csv")) == 1 + 3
    assert "tau,method" in capsys.readouterr().out


def test_prior_draw(tmp_path):
    out = tmp_path / "prior"
    assert main(["prior-draw", "--tau", "0.1,0.5,0.9", "--draws", "50", "--mu", "2", "--out", str(out)]) == 0
    rows = _rows(out / "prior_draws.csv")
    assert rows[0] == ["draw", "tau0.1", "tau0.5", "tau0.9"] and len(rows) == 51
    vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert np.all(np.diff(vals, axis=1) > 0)


def test_config_file_and_flag_precedence(tmp_path, design_csv):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\niters = 300\nburnin=50\nseed = 9\ntau = 0.2,0.8\n")
    args = parse_args(["fit", str(design_csv), "--config", str(cfg), "--seed", "4"])
    assert (args.iters, args.burnin, args.seed, args.tau) == (300, 50, 4, (0.2, 0.8))


@pytest.mark.parametrize("argv, needle", [
    (["fit", "missing.csv"], "no such file"),
    (["fit", "x.csv", "--tau", "0.5,0.2"], "tau"),
    (["bench", "--design", "9"], "design"),
    (["frobnicate"], "invalid choice"),
    (["extreme-fit", "x.csv"], "threshold"),
])
def test_errors_are_single_line(argv, needle, capsys):
    assert main(argv) == 2
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1 and needle in err


def test_data_error_is_single_line(tmp_path, capsys):
    p = _write_csv(tmp_path / "bad.csv", ["y", "x"], [[1, 0], ["inf", 1], [2, 2]])
    assert main(["fit", str(p), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "row 3" in err


@pytest.mark.skipif(shutil.which("pyramid-qr") is None, reason="console script not installed")
def test_console_script(tmp_path):
    r = subprocess.run(["pyramid-qr", "prior-draw", "--draws", "3", "--out", str(tmp_path)],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "prior_draws.csv").exists()
