import csv
import shutil
from pathlib import Path

import numpy as np
import pytest

from dssns import cli
from dssns.dss_fields import read_snapshot

DATA = Path(__file__).parent / "data"
TINY = """[problem]
lambda = {lam}
C_star = 0.05
[data]
family = {family}
[grid]
n_rho = 6
r_min = 0.5
r_max = 8.0
n_theta = 2
n_phi = 4
n_time = 2
"""


def _cfg(tmp_path, lam=2.0, family="zero", extra=""):
    p = tmp_path / "run.cfg"
    p.write_text(TINY.format(lam=lam, family=family) + extra)
    return p


def _rows(path):
    return list(csv.reader(l for l in open(path) if not l.startswith("#") and l.strip()))


@pytest.fixture(scope="module")
def golden(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    code = cli.main(["solve", "--config", str(DATA / "golden.cfg"), "--out", str(out)])
    return code, out


@pytest.mark.parametrize("lam", [1.0, 0.5])
def test_lambda_at_most_one_is_config_error(tmp_path, lam, capsys):
    assert cli.main(["solve", "--config", str(_cfg(tmp_path, lam)), "--out",
                     str(tmp_path)]) == cli.EXIT_CONFIG
    assert "lambda" in capsys.readouterr().err


@pytest.mark.parametrize("old,new", [("n_rho = 6", "n_rho = many"),
                                     ("[grid]", "[bogus]\na = 1\n[grid]"),
                                     ("[grid]", "[solver]\ndamping = 2\n[grid]"),
                                     ("[grid]", "[quadrature]\nn_radial = 1\n[grid]"),
                                     ("family = zero", "family = turbulent")])
def test_bad_config_values(tmp_path, old, new):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(TINY.format(lam=2.0, family="zero").replace(old, new))
    assert cli.main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_missing_config(tmp_path):
    assert cli.main(["report", "--config", str(tmp_path / "nope.cfg")]) == cli.EXIT_CONFIG


def test_zero_data_solve(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["solve", "--config", str(_cfg(tmp_path)), "--out", str(out)]) == 0
    v = read_snapshot(out / "snapshot.txt")
    assert np.all(v.samples == 0.0)
    rows = _rows(out / "continuation.csv")
    assert rows[-1][-1] == "reached_sigma_1"


def test_config_hash_ignores_output_dir(tmp_path):
    a = cli.load_config(_cfg(tmp_path))
    p = tmp_path / "other.cfg"
    p.write_text(TINY.format(lam=2.0, family="zero") + "[output]\ndir = elsewhere\n")
    b = cli.load_config(p)
    assert a.hash == b.hash
    assert cli.load_config(_cfg(tmp_path), seed=9).hash != a.hash


def test_golden_solve_artifacts(golden):
    code, out = golden
    assert code == 0
    h = cli.load_config(DATA / "golden.cfg").hash
    names = ["snapshot.txt", "continuation.csv", "residuals_final.csv", "audit_summary.txt",
             "continuation_summary.txt"]
    for name in names:
        assert f"# config_hash={h}" in (out / name).read_text().splitlines()[:5], name
    summary = dict(l.split("=", 1) for l in (out / "audit_summary.txt").read_text().splitlines()
                   if not l.startswith("#"))
    assert summary["status"] == "reached_sigma_1"
    assert summary["certificate_pass"] == "True"
    assert summary["mild_pass"] == "True" and summary["dss_pass"] == "True"
    assert float(summary["swirl_iterates_max"]) <= 1e-10


def test_extend(golden, tmp_path):
    _, out = golden
    v = read_snapshot(out / "snapshot.txt")
    g = v.grid
    X, T = g.node_arrays()
    idx = [0, 7, X.shape[0] // 2, X.shape[0] - 1]
    lam = g.lam
    pts = [np.r_[X[i], T[i]] for i in idx]
    probe = np.array([0.7, -0.3, 1.1])
    pts += [np.r_[probe, 1.3], np.r_[lam * probe, lam * lam * 1.3],
            np.r_[probe / lam, 1.3 / lam ** 2], np.r_[probe, 0.0], np.r_[probe, -1.0]]
    pf = tmp_path / "pts.csv"
    pf.write_text("x1,x2,x3,t\n" + "".join(",".join(repr(float(c)) for c in p) + "\n" for p in pts))
    n, skipped = cli.run_extend(cli.load_config(DATA / "golden.cfg"), out / "snapshot.txt", pf,
                                tmp_path)
    assert (n, skipped) == (len(pts) - 2, 2)
    text = (tmp_path / "extend.csv").read_text()
    assert "# skipped_rows=2" in text
    rows = np.array(_rows(tmp_path / "extend.csv")[1:], dtype=float)
    # nodes of the strip come back exactly
    for r, i in zip(rows[:4], idx):
        assert np.allclose(r[5:], v.samples.reshape(-1, 3)[i], rtol=1e-12, atol=1e-15)
    # DSS rows: E v(lam x, lam^2 t) = E v(x, t) / lam
    base, up, down = rows[4], rows[5], rows[6]
    assert np.allclose(lam * up[5:], base[5:], rtol=1e-12, atol=1e-15)
    assert np.allclose(down[5:] / lam, base[5:], rtol=1e-12, atol=1e-15)
    for r in rows:
        scan = next(j for j in range(-30, 30) if 1.0 <= lam ** (2 * j) * r[3] < lam * lam)
        assert int(r[4]) == scan


def test_read_points_rejects_garbage(tmp_path):
    pf = tmp_path / "pts.txt"
    pf.write_text("x1 x2 x3 t\n1 2 3 1\n1 2 oops 1\n")
    with pytest.raises(cli.ConfigError):
        cli.read_points(pf)
    pf.write_text("x y z t\nstill a header\n")
    with pytest.raises(cli.ConfigError):
        cli.read_points(pf)
    pf.write_text("# comment\n1, 2, 3, 1.5\n")
    X, T = cli.read_points(pf)
    assert X.tolist() == [[1.0, 2.0, 3.0]] and T.tolist() == [1.5]


def test_report(golden, tmp_path):
    _, out = golden
    work = tmp_path / "rep"
    shutil.copytree(out, work)
    assert cli.main(["report", "--out", str(work)]) == 0
    text = (work / "report.txt").read_text()
    assert "[audit_summary.txt]" in text and "status=reached_sigma_1" in text
    (work / "verify_all.txt").write_text("kernel_oracle=fail\n")
    assert cli.main(["report", "--out", str(work)]) == cli.EXIT_AUDIT
    empty = tmp_path / "empty"
    empty.mkdir()
    assert cli.main(["report", "--out", str(empty)]) == cli.EXIT_CONFIG


def test_verify_kernels_and_sign_flip(tmp_path, monkeypatch, capsys):
    assert cli.main(["verify", "--suite", "kernels", "--out", str(tmp_path / "ok")]) == 0
    assert (tmp_path / "ok" / "verify_kernels.txt").exists()
    monkeypatch.setenv("DSSNS_TEST_FLIP_SIGN", "1")
    bad = tmp_path / "bad"
    assert cli.main(["verify", "--suite", "kernels", "--out", str(bad)]) == cli.EXIT_AUDIT
    assert "kernel_oracle=fail" in (bad / "verify_kernels.txt").read_text()
    assert "FAIL kernel_oracle" in capsys.readouterr().out


def test_verify_unknown_suite(tmp_path):
    assert cli.main(["verify", "--suite", "fluids", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_thread_precedence(monkeypatch):
    import numba
    cap = numba.config.NUMBA_NUM_THREADS
    monkeypatch.setenv(cli.THREADS_ENV, "1")
    assert cli.configure_threads(None) == 1
    assert cli.configure_threads(cap) == cap
    monkeypatch.delenv(cli.THREADS_ENV)
    assert cli.configure_threads(None) is None
    with pytest.raises(cli.ConfigError):
        cli.configure_threads(0)
    numba.set_num_threads(cap)
