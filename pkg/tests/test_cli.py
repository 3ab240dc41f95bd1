import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mixedldu.cli import RunConfig, emit_history, load_solution, main, make_rhs, residual, run
from mixedldu.fixtures import floating_subdomains, forced_postponing_instance
from mixedldu.krylov import ConvergenceHistory
from mixedldu.precision import ScalarKind
from mixedldu.sparsemat import SparseMatrix, read_matrix_market, write_matrix_market

EPS_D = ScalarKind.DOUBLE.eps


@pytest.fixture
def identity_mtx(tmp_path):
    path = tmp_path / "eye10.mtx"
    write_matrix_market(path, SparseMatrix.from_dense(np.eye(10)))
    return path


@pytest.fixture
def general_mtx(tmp_path):
    k, _ = forced_postponing_instance(120, 4, seed=9)
    path = tmp_path / "gen.mtx"
    write_matrix_market(path, k)
    return path


def without_times(report):
    d = json.loads(report.to_json())
    return {k: v for k, v in d.items() if not k.endswith("_seconds")}


def test_identity_report(identity_mtx, tmp_path):
    hist = tmp_path / "h.csv"
    rep = run(RunConfig(str(identity_mtx), history_path=str(hist), report_path=str(tmp_path / "r.json")))
    assert rep.status == "ok" and rep.mode == "mixed"
    assert rep.error <= EPS_D and rep.residual <= EPS_D and rep.kernel_dim == 0
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["schema"] == 1 and d["norm"] == "max" and d["n"] == 10 and d["matrix"] == "eye10"


def test_empty_run_history_has_one_row(tmp_path):
    h = ConvergenceHistory("bgcr")
    h.add(0, [0.0], 0.0)
    emit_history(h, tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert len(rows) == 2 and rows[1][0] == "0"
    with pytest.raises(ValueError):
        emit_history(ConvergenceHistory("ir"), tmp_path / "e.csv")


def test_report_is_deterministic(general_mtx):
    cfg = RunConfig(str(general_mtx), rhs="seed:3", levels=2)
    assert without_times(run(cfg)) == without_times(run(cfg))


def test_saved_solution_reproduces_residual(general_mtx, tmp_path):
    sol = tmp_path / "x.txt"
    rep = run(RunConfig(str(general_mtx), levels=2, solution_path=str(sol)))
    k = read_matrix_market(general_mtx)
    b, _ = make_rhs(k, "mod11", ScalarKind.DOUBLE)
    res = residual(k, load_solution(sol), b)
    assert abs(res - rep.residual) <= 2 * np.spacing(rep.residual)


def test_double_double_solution_round_trip(tmp_path):
    path = tmp_path / "k1.mtx"
    write_matrix_market(path, floating_subdomains(1, 200, seed=2))
    sol = tmp_path / "x.txt"
    rep = run(RunConfig(str(path), tau=0.01, pair="f64dd", solution_path=str(sol)))
    assert rep.kernel_dim == 1 and rep.residual <= 1e-28
    x = load_solution(sol)
    assert x.shape == (rep.n,) and np.abs(x.lo).max() > 0


@pytest.mark.parametrize("pure,label", [("f32", "pure-lower"), ("f64", "pure-higher")])
def test_pure_mode_labels(general_mtx, pure, label):
    rep = run(RunConfig(str(general_mtx), pure=pure, levels=2))
    assert rep.mode == label and rep.precision == pure and rep.status == "ok"


def test_pure_dd_is_pure_higher_of_the_extended_pair(general_mtx):
    rep = run(RunConfig(str(general_mtx), pure="dd", pair="f64dd", levels=2))
    assert rep.mode == "pure-higher" and rep.residual <= 1e-28


def test_rhs_from_file(general_mtx, tmp_path):
    f = tmp_path / "b.txt"
    np.savetxt(f, np.ones(120))
    rep = run(RunConfig(str(general_mtx), rhs=f"file:{f}", levels=2))
    assert rep.error is None and rep.residual <= 1e-14
    np.savetxt(f, np.ones(7))
    with pytest.raises(ValueError):
        run(RunConfig(str(general_mtx), rhs=f"file:{f}"))


def test_config_validation(identity_mtx):
    for bad in (dict(tau=1.5), dict(levels=0), dict(n_extra=-1), dict(pair="f16"),
                dict(method="cg"), dict(rhs="ones"), dict(pure="f128")):
        with pytest.raises(ValueError):
            RunConfig(str(identity_mtx), **bad)


def test_non_convergence_exit_code(general_mtx, tmp_path, capsys):
    hist = tmp_path / "h.csv"
    code = main(["--matrix", str(general_mtx), "--levels", "2", "--tol", "1e-30",
                 "--max-iter", "2", "--history", str(hist)])
    out = json.loads(capsys.readouterr().out)
    assert code == 2 and out["status"].endswith("not_converged")
    assert out["error"] is None and hist.exists()


def test_error_exit_codes(tmp_path, capsys):
    assert main(["--matrix", str(tmp_path / "missing.mtx")]) == 1
    bad = tmp_path / "bad.mtx"
    bad.write_text("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 x 1.0\n")
    assert main(["--matrix", str(bad)]) == 1
    assert "line" in capsys.readouterr().err


def test_module_entry_point(identity_mtx):
    out = subprocess.run([sys.executable, "-m", "mixedldu", "--matrix", str(identity_mtx),
                          "--method", "ir"], capture_output=True, text=True, check=True)
    d = json.loads(out.stdout)
    assert d["status"] == "ok" and d["method"] == "ir"
