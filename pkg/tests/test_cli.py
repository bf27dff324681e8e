import csv

import numpy as np
import pytest

from conftest import desk_matrix
from ctgmres.cli import ConfigError, main, parse_config
from ctgmres.sparsecore import mm_read

DESK = """\
# desk problem
geometry = desk
model_a = strip
model_b = {model_b}
solver = {solver}
max_iter = {max_iter}
stop_rule = {stop_rule}
"""

TINY = """\
n_pixels = 24
angles = 0:6:30
n_det = 24
model_a = strip
model_b = {model_b}
phantom_kind = sheppLogan
max_iter = 20
"""


def write_cfg(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, text, *cmd, out="out"):
    cfg = write_cfg(tmp_path, text)
    return main([*cmd, "--config", cfg, "--out", str(tmp_path / out), "--threads", "1"])


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def summary(tmp_path, out="out"):
    line = (tmp_path / out / "summary.txt").read_text().strip()
    return dict(kv.split("=", 1) for kv in line.split())


# -- config ------------------------------------------------------------------

def test_parse_config_basics():
    cfg = parse_config("geometry = desk  # inline\n\n# c\nmodel_b = threshold:0.1\nreorth = yes\n")
    assert cfg.threshold_tau == 0.1 and cfg.reorth
    g = cfg.scan_geometry()
    assert (g.m, g.n) == (5760, 4096)
    g = parse_config("geometry = desk\nn_det = 70\ndet_offset = 0.5\n").scan_geometry()
    assert g.n_det == 70 and g.det_offset == 0.5


def test_angle_syntax():
    a = parse_config("n_pixels = 8\nangles = 0:45:4\nn_det = 8\n").scan_geometry()
    b = parse_config("n_pixels = 8\nangles = 0,45,90,135\nn_det = 8\n").scan_geometry()
    assert a == b


@pytest.mark.parametrize("text, key", [
    ("geometry = desk\nfoo = 1\n", "foo"),
    ("geometry = desk\nmodel_a = fan\n", "model_a"),
    ("geometry = desk\nmax_iter = 0\n", "max_iter"),
    ("geometry = desk\nmax_iter = many\n", "max_iter"),
    ("geometry = desk\nsolver = cg\n", "solver"),
    ("geometry = desk\ngeometry = small\n", "geometry"),
    ("geometry = medium\n", "geometry"),
    ("model_a = strip\n", "geometry"),
    ("geometry = desk\nmodel_b = threshold:-1\n", "model_b"),
    ("geometry = desk\ndp_tau = 0.5\n", "dp_tau"),
    ("geometry desk\n", "key = value"),
])
def test_config_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(text)


def test_invalid_model_exit_code(tmp_path, capsys):
    rc = run(tmp_path, "geometry = desk\nmodel_a = cone\n", "build-matrix")
    assert rc == 2
    assert "model_a" in capsys.readouterr().err


def test_zero_max_iter_exit_code(tmp_path):
    assert run(tmp_path, "geometry = desk\nmax_iter = 0\n", "solve") == 2


def test_missing_config_exit_code(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "none.cfg")]) == 4


def test_unwritable_output_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_cfg(tmp_path, TINY.format(model_b="line"))
    assert main(["solve", "--config", cfg, "--out", str(blocker / "sub")]) == 4


# -- commands ----------------------------------------------------------------

def test_build_matrix_desk_roundtrip(tmp_path):
    rc = run(tmp_path, "geometry = desk\nmodels = line,strip,joseph\n", "build-matrix")
    assert rc == 0
    rows = read_csv(tmp_path / "out" / "summary.csv")
    assert [r["model"] for r in rows] == ["line", "strip", "joseph"]
    for r in rows:
        M = mm_read(tmp_path / "out" / r["file"])
        assert M.equals(desk_matrix(r["model"]))
        assert (int(r["rows"]), int(r["cols"]), int(r["nnz"])) == (5760, 4096, M.nnz)
        assert float(r["sparsity"]) == M.sparsity
    assert rows[0]["file"] == "A_line_64x90x64.mtx"


def test_solve_matched_dp(tmp_path):
    text = DESK.format(model_b="strip", solver="ab", max_iter=100, stop_rule="dp")
    assert run(tmp_path, text, "solve") == 0
    s = summary(tmp_path)
    k_stop, k_min = int(s["k_stop"]), int(s["k_min"])
    assert float(s["err_stop"]) <= 1.5 * float(s["err_min"])
    assert k_stop <= k_min
    trace = read_csv(tmp_path / "out" / "trace.csv")
    assert len(trace) == 100
    flags = [int(r["stop_flag"]) for r in trace]
    assert flags.index(1) + 1 == k_stop and sum(flags) == 1
    dp = [float(r["dp_lhs"]) <= float(r["dp_rhs"]) for r in trace]
    assert dp.index(True) + 1 == k_stop
    for name in ("recon_final.pgm", "recon_best.pgm"):
        assert (tmp_path / "out" / name).read_text().startswith("P2\n64 64\n65535\n")


def test_solve_storage_ab_vs_ba(tmp_path):
    for solver in ("ab", "ba"):
        text = DESK.format(model_b="line", solver=solver, max_iter=50, stop_rule="none")
        assert run(tmp_path, text, "solve", out=solver) == 0
    ab, ba = summary(tmp_path, "ab"), summary(tmp_path, "ba")
    assert int(ab["storage"]) == int(ab["k_min"]) * 5760
    assert int(ba["storage"]) == int(ba["k_min"]) * 4096
    assert ab["k_stop"] == "NA"


@pytest.mark.parametrize("solver", ["lsqr", "lsmr", "landweber"])
def test_solve_other_solvers(tmp_path, solver):
    text = TINY.format(model_b="strip") + f"solver = {solver}\nstop_rule = ncp\n"
    assert run(tmp_path, text, "solve") == 0
    s = summary(tmp_path)
    assert s["solver"] == solver and s["diverged"] == "0"


def test_landweber_divergence_exit_code(tmp_path):
    text = TINY.format(model_b="strip") + "solver = landweber\nomega = 1.0\n"
    assert run(tmp_path, text, "solve") == 3
    assert summary(tmp_path)["diverged"] == "1"


def test_sweep_tau(tmp_path, capsys):
    text = DESK.format(model_b="threshold:0.1", solver="ab", max_iter=60, stop_rule="none")
    cfg = write_cfg(tmp_path, text)
    rc = main(["sweep-tau", "--config", cfg, "--out", str(tmp_path / "out"),
               "--taus", "0,0.01,0.1,0.3,0.5"])
    assert rc == 0
    rows = read_csv(tmp_path / "out" / "sweep.csv")
    u = np.array([float(r["unmatchedness"]) for r in rows])
    e = np.array([float(r["err_min_noisy"]) for r in rows])
    assert u[0] == 0.0 and np.all(np.diff(u) >= 0)
    assert np.corrcoef(u, e)[0, 1] >= 0.9
    assert "pearson" in capsys.readouterr().out


def test_sweep_tau_requires_threshold(tmp_path):
    text = TINY.format(model_b="line")
    assert run(tmp_path, text, "sweep-tau") == 2


def test_analyze_spectrum_matched(tmp_path, capsys):
    assert run(tmp_path, TINY.format(model_b="strip"), "analyze", "--what", "spectrum") == 0
    assert "n_negative_real=0" in capsys.readouterr().out
    rows = read_csv(tmp_path / "out" / "spectrum.csv")
    assert len(rows) == 576


def test_analyze_spectrum_cap(tmp_path, capsys):
    assert run(tmp_path, "geometry = small\n", "analyze", "--what", "spectrum") == 2
    assert "cap" in capsys.readouterr().err


def test_analyze_picard(tmp_path):
    assert run(tmp_path, TINY.format(model_b="strip"), "analyze", "--what", "picard") == 0
    sig = [float(r["sigma"]) for r in read_csv(tmp_path / "out" / "picard.csv")]
    assert len(sig) == 576 and np.all(np.diff(sig) <= 0)


def test_analyze_coeffs(tmp_path):
    text = TINY.format(model_b="line") + "coeff_iters = 1,5,20\n"
    assert run(tmp_path, text, "analyze", "--what", "coeffs") == 0
    rows = read_csv(tmp_path / "out" / "coeffs.csv")
    assert list(rows[0]) == ["i", "sigma", "exact", "k1", "k5", "k20"]
    text = TINY.format(model_b="line") + "coeff_iters = 5\nkeep_iterates = 2\n"
    assert run(tmp_path, text, "analyze", "--what", "coeffs") == 2


def test_analyze_bound(tmp_path):
    text = TINY.format(model_b="strip") + "bound_instances = 5\n"
    assert run(tmp_path, text, "analyze", "--what", "bound") == 0
    rows = read_csv(tmp_path / "out" / "bound.csv")
    assert len(rows) == 15
    by_inst = {}
    for r in rows:
        by_inst.setdefault(r["instance"], []).append(
            (float(r["epsilon"]), float(r["observed"]), float(r["bound"])))
    for ladder in by_inst.values():
        e0, o0, b0 = ladder[0]
        C = max(0.0, o0 - 1.1 * b0) / e0**2
        assert all(o <= 1.1 * b + C * e**2 for e, o, b in ladder)


def test_repeat_runs_identical(tmp_path):
    text = TINY.format(model_b="line") + "stop_rule = dp\n"
    for out in ("a", "b"):
        assert run(tmp_path, text, "solve", out=out) == 0
    for name in ("trace.csv", "summary.txt", "recon_final.pgm", "recon_best.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
