import numpy as np
import pytest

from fracgmrf.cli import main


def _body(path):
    return [l for l in open(path).read().splitlines() if not l.startswith("#")]


def _table(path):
    lines = _body(path)
    head = lines[0].split(",")
    return [dict(zip(head, l.split(","))) for l in lines[1:]]


@pytest.fixture
def obs_file(tmp_path):
    path = tmp_path / "obs.csv"
    assert main(["simulate", "--n", "8", "--n-obs", "60", "--seed", "4", "--out", str(path)]) == 0
    return path


def test_header_records_provenance(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["ratapprox", "--alpha", "0.3", "--m", "2", "--seed", "9", "--out", str(out)]) == 0
    head = [l for l in out.read_text().splitlines() if l.startswith("#")]
    assert head[0].startswith("# fracgmrf ")
    assert "# command=ratapprox" in head and "# seed=9" in head
    assert "# alpha=0.3" in head and "# algo=brasil" in head


def test_ratapprox_table(tmp_path):
    out = tmp_path / "r.csv"
    assert main(["ratapprox", "--alpha", "0.5", "--m", "3", "--rational-algo", "cp", "--out", str(out)]) == 0
    rows = _table(out)
    q = [r["quantity"] for r in rows]
    assert q.count("a") == 4 and q.count("b") == 4 and q.count("r") == 3 and q.count("p") == 3
    r = {(x["quantity"], x["index"]): float(x["value"]) for x in rows if x["quantity"] != "converged"}
    assert r[("k", "0")] > 0 and r[("p", "1")] < 0


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nalpha = 0.4\nm=1\nseed=3\n")
    out = tmp_path / "r.csv"
    assert main(["ratapprox", "--config", str(cfg), "--m", "2", "--out", str(out)]) == 0
    text = out.read_text()
    assert "# alpha=0.4" in text and "# m=2" in text and "# seed=3" in text


def test_config_errors_name_the_line(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("alpha=0.4\n\nbogus_key=1\n")
    assert main(["ratapprox", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "bad.cfg:3" in err and "bogus_key" in err
    cfg.write_text("m=two\n")
    assert main(["ratapprox", "--config", str(cfg)]) == 2
    assert "bad.cfg:1" in capsys.readouterr().err
    cfg.write_text("no equals sign\n")
    assert main(["ratapprox", "--config", str(cfg)]) == 2
    assert main(["ratapprox", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_bad_values_exit_two(tmp_path):
    assert main(["ratapprox", "--alpha", "1.5"]) == 2
    assert main(["ratapprox", "--delta", "bogus"]) == 2
    assert main(["mesh", "--n", "1", "--out", str(tmp_path / "m.txt")]) == 2
    assert main(["build", "--n", "5"]) == 2
    assert main(["loglik", "--n", "5"]) == 2


def test_numerical_failure_exits_three(tmp_path):
    assert main(["ratapprox", "--alpha", "0.6", "--m", "12", "--algo", "cp",
                 "--out", str(tmp_path / "r.csv")]) == 3


def test_mesh_and_projector(tmp_path):
    locs = tmp_path / "locs.csv"
    locs.write_text("x,y\n0.25,0.5\n0.9,0.1\n")
    out, proj = tmp_path / "mesh.txt", tmp_path / "A.txt"
    assert main(["mesh", "--n", "4", "--locations", str(locs), "--projector-out", str(proj),
                 "--out", str(out)]) == 0
    assert len(_body(out)) > 16
    rows = np.loadtxt(proj, skiprows=1)
    assert open(proj).readline().split() == ["2", "16", str(len(rows))]
    sums = np.bincount(rows[:, 0].astype(int), weights=rows[:, 2])
    assert np.allclose(sums, 1.0)


def test_build_writes_blocks(tmp_path):
    out = tmp_path / "model"
    assert main(["build", "--n", "6", "--nu", "0.6", "--m", "2", "--out", str(out)]) == 0
    rows = _table(out / "summary.csv")
    assert [r["block"] for r in rows] == ["1", "2", "3"]
    assert all(int(r["n"]) == 36 for r in rows)
    assert (out / "block_3.txt").exists() and (out / "manifest.txt").exists()


def test_simulate_loglik_predict(tmp_path, obs_file):
    rows = _table(obs_file)
    assert len(rows) == 60 and set(rows[0]) == {"x", "y", "value"}
    ll = tmp_path / "ll.csv"
    assert main(["loglik", "--n", "8", "--obs", str(obs_file), "--out", str(ll)]) == 0
    val = float(_table(ll)[0]["loglik"])
    assert np.isfinite(val)
    locs = tmp_path / "new.csv"
    locs.write_text("0.5 0.5\n0.1 0.9\n")
    pr = tmp_path / "pred.csv"
    assert main(["predict", "--n", "8", "--obs", str(obs_file), "--locations", str(locs),
                 "--n-samples", "2", "--seed", "1", "--out", str(pr)]) == 0
    rows = _table(pr)
    assert len(rows) == 2 and "sample_2" in rows[0] and float(rows[0]["sd"]) > 0


def test_fit_command(tmp_path, obs_file):
    out = tmp_path / "fit.csv"
    assert main(["fit", "--n", "8", "--obs", str(obs_file), "--fix-nu", "0.6", "--max-iter", "40",
                 "--out", str(out)]) == 0
    text = out.read_text()
    assert "# result: sigma=" in text and "nu=0.6 " in text
    rows = _table(out)
    assert rows[0].keys() == {"iter", "sigma", "rho", "nu", "sigma_eps", "loglik"}


def test_cv_zero_radius_is_plain_kriging(tmp_path, obs_file):
    out = tmp_path / "cv.csv"
    assert main(["cv", "--n", "8", "--obs", str(obs_file), "--radius", "0,0.2", "--n-targets", "10",
                 "--out", str(out)]) == 0
    rows = _table(out)
    assert [float(r["D"]) for r in rows] == [0.0, 0.2]
    assert float(rows[0]["mse"]) <= float(rows[1]["mse"]) * 1.5 + 1e-12


def test_bench_cov_integer_case_ignores_m(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench-cov", "--N", "9", "--nu", "1.0", "--m", "1,2,3", "--out", str(out)]) == 0
    rows = _table(out)
    assert len({r["l2_err"] for r in rows}) == 1 and len({r["sup_err"] for r in rows}) == 1
    assert rows[0]["seconds"] == "nan"


def test_bench_loglik_integer_case_ignores_m(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench-loglik", "--N", "8", "--n-obs", "20", "--nu", "1.0", "--m", "1,2",
                 "--replicates", "3", "--out", str(out)]) == 0
    rows = _table(out)
    by_m = {}
    for r in rows:
        by_m.setdefault(r["m"], []).append(float(r["abs_rel_err"]))
    a, b = by_m.values()
    assert np.median(a) == np.median(b)


def test_fem_rate_table(tmp_path):
    out = tmp_path / "f.csv"
    assert main(["fem-rate", "--N", "5,9", "--nu", "1.0", "--out", str(out)]) == 0
    rows = _table(out)
    assert len(rows) == 2 and float(rows[1]["l2_err"]) < float(rows[0]["l2_err"])


@pytest.mark.parametrize("argv", [
    ["ratapprox", "--alpha", "0.7", "--m", "3"],
    ["mesh", "--n", "5"],
    ["simulate", "--n", "6", "--n-obs", "30", "--seed", "2"],
    ["bench-cov", "--N", "7", "--m", "1,2"],
    ["bench-loglik", "--N", "7", "--n-obs", "15", "--replicates", "2", "--seed", "5"],
    ["fem-rate", "--N", "5,9", "--nu", "0.6"],
])
def test_reruns_are_byte_identical(tmp_path, argv):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_workers_do_not_change_results(tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    argv = ["bench-cov", "--N", "7", "--m", "1,2,3"]
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--workers", "2", "--out", str(b)]) == 0
    assert _body(a) == _body(b)


def test_stdout_output(capsys):
    assert main(["ratapprox", "--alpha", "0.5", "--m", "1"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# fracgmrf") and "quantity,index,value" in out
