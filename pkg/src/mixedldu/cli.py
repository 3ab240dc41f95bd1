"""Command-line driver: factor and solve one Matrix Market file, report accuracy.

Example::

    python -m mixedldu --matrix K.mtx --pair f32f64 --tau 0.05 --report out.json

The report is one JSON line; error and residual are max-norm relative
quantities, ``|x - x*|_inf / |x*|_inf`` and ``|b - K x|_inf / |b|_inf``,
evaluated in the higher precision of the run.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .fixtures import mod11_solution
from .hybrid import InnerSolverError, direct_factor, hybrid_factor, hybrid_solve
from .krylov import ConvergenceHistory, Method, SolverConfig
from .precision import DDArray, PrecisionPair, ScalarKind, asarray, is_dd, to_float64
from .sparsemat import SparseMatrix, read_matrix_market, spmv

__all__ = ["RunConfig", "SolveReport", "run", "emit_history", "main", "make_rhs"]

SCHEMA = 1
log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    matrix_path: str
    tau: float = 0.05
    levels: int | None = None
    n_extra: int = 4
    pair: str = "f32f64"
    pure: str | None = None
    method: str = "bgcr"
    tol: float | None = None
    max_iter: int = 100
    rhs: str = "mod11"
    history_path: str | None = None
    report_path: str | None = None
    solution_path: str | None = None

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.levels is not None and self.levels < 1:
            raise ValueError("levels must be at least 1")
        if self.n_extra < 0:
            raise ValueError("n-extra must be non-negative")
        PrecisionPair.parse(self.pair)
        if self.pure is not None:
            ScalarKind.parse(self.pure)
        Method.parse(self.method)
        if not (self.rhs == "mod11" or self.rhs.startswith(("file:", "seed:"))):
            raise ValueError(f"unknown rhs mode {self.rhs!r}")

    @property
    def precision_pair(self) -> PrecisionPair:
        return PrecisionPair.parse(self.pair)

    @property
    def mode(self) -> str:
        if self.pure is None:
            return "mixed"
        kind = ScalarKind.parse(self.pure)
        pair = self.precision_pair
        if kind is pair.lower:
            return "pure-lower"
        if kind is pair.higher:
            return "pure-higher"
        return "pure-lower" if kind.eps > pair.lower.eps else "pure-higher"

    @property
    def working(self) -> ScalarKind:
        """Precision in which inputs and results are represented."""
        if self.pure is None:
            return self.precision_pair.higher
        kind = ScalarKind.parse(self.pure)
        return ScalarKind.DOUBLE if kind is ScalarKind.SINGLE else kind


@dataclass
class SolveReport:
    matrix: str
    n: int
    nnz: int
    mode: str
    precision: str
    tau: float
    levels: int
    n_extra: int
    method: str
    error: float | None
    residual: float | None
    kernel_dim: int | None
    M: int | None
    iterations: int | None
    inconsistent: bool
    factor_seconds: float
    solve_seconds: float
    status: str
    norm: str = "max"
    schema: int = SCHEMA

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, allow_nan=False)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _as_working(k: SparseMatrix, kind: ScalarKind) -> SparseMatrix:
    if kind is not ScalarKind.DOUBLEDOUBLE or is_dd(k.values):
        return k
    return SparseMatrix(k.nrows, k.ncols, k.row_starts, k.col_indices,
                        DDArray(np.asarray(k.values, dtype=np.float64)), k.symmetry)


def make_rhs(k: SparseMatrix, mode: str, kind: ScalarKind):
    """``(b, x_star)``; ``x_star`` is ``None`` when only ``b`` is known."""
    if mode == "mod11":
        xs = mod11_solution(k.nrows)
    elif mode.startswith("seed:"):
        xs = np.random.default_rng(int(mode[5:])).standard_normal(k.nrows)
    elif mode.startswith("file:"):
        b = np.loadtxt(mode[5:], dtype=np.float64, ndmin=1)
        if b.shape != (k.nrows,):
            raise ValueError(f"right-hand side file has {b.size} entries, matrix has {k.nrows}")
        return asarray(b, kind), None
    else:
        raise ValueError(f"unknown rhs mode {mode!r}")
    xs = asarray(xs, kind)
    return spmv(k, xs), xs


def _relmax(num, den) -> float:
    return float(np.max(np.abs(to_float64(num)))) / float(np.max(np.abs(to_float64(den))))


def residual(k: SparseMatrix, x, b) -> float:
    """``|b - K x|_inf / |b|_inf`` in the precision of ``k`` and ``b``."""
    kind = ScalarKind.DOUBLEDOUBLE if is_dd(b) else ScalarKind.DOUBLE
    return _relmax(b - spmv(k, asarray(x, kind)), b)


def emit_history(h: ConvergenceHistory, path) -> None:
    """Write ``iter,column,relative_residual,elapsed_seconds,method`` rows."""
    if not h.records:
        raise ValueError("empty convergence history")
    h.to_csv(path)


def save_solution(x, path) -> None:
    """One line per entry; double-double entries as ``hi lo``."""
    if is_dd(x):
        np.savetxt(path, np.c_[x.hi, x.lo], fmt="%.17g")
    else:
        np.savetxt(path, np.asarray(x, dtype=np.float64), fmt="%.17g")


def load_solution(path):
    a = np.loadtxt(path, dtype=np.float64, ndmin=1)
    return DDArray(a[:, 0], a[:, 1]) if a.ndim == 2 else a


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def run(cfg: RunConfig) -> SolveReport:
    kind = cfg.working
    kbar = _as_working(read_matrix_market(cfg.matrix_path), kind)
    b, xs = make_rhs(kbar, cfg.rhs, kind)
    scfg = SolverConfig(tol=cfg.tol, max_iter=cfg.max_iter, method=cfg.method)
    name = Path(cfg.matrix_path).stem
    base = dict(matrix=name, n=kbar.nrows, nnz=kbar.nnz, mode=cfg.mode,
                precision=(cfg.pure or cfg.pair), tau=cfg.tau, n_extra=cfg.n_extra,
                method=Method.parse(cfg.method).value)

    t0 = time.perf_counter()
    try:
        if cfg.pure is None:
            F = hybrid_factor(kbar, cfg.tau, cfg.precision_pair, scfg, cfg.levels, cfg.n_extra)
        else:
            F = direct_factor(kbar, ScalarKind.parse(cfg.pure), cfg.tau, cfg.levels, cfg.n_extra)
    except InnerSolverError as exc:
        report = SolveReport(levels=cfg.levels or 0, error=None, residual=None, kernel_dim=None,
                             M=None, iterations=exc.history.niter, inconsistent=False,
                             factor_seconds=time.perf_counter() - t0, solve_seconds=0.0,
                             status="factor_not_converged", **base)
        _write(cfg, report, exc.history)
        return report
    tf = time.perf_counter() - t0

    t0 = time.perf_counter()
    try:
        out = hybrid_solve(F, b, scfg)
    except InnerSolverError as exc:
        report = SolveReport(levels=F.tree.levels, error=None, residual=None,
                             kernel_dim=F.kernel_dim, M=F.M, iterations=exc.history.niter,
                             inconsistent=False, factor_seconds=tf,
                             solve_seconds=time.perf_counter() - t0,
                             status="solve_not_converged", **base)
        _write(cfg, report, exc.history)
        return report
    ts = time.perf_counter() - t0

    x = out.x
    err = _relmax(asarray(x, kind) - xs, xs) if xs is not None else None
    res = residual(kbar, x, b)
    report = SolveReport(levels=F.tree.levels, error=err, residual=res, kernel_dim=F.kernel_dim,
                         M=F.M, iterations=out.history.niter, inconsistent=bool(out.inconsistent),
                         factor_seconds=tf, solve_seconds=ts, status="ok", **base)
    if cfg.solution_path:
        save_solution(x, cfg.solution_path)
    _write(cfg, report, F.history if F.history is not None else out.history)
    return report


def _write(cfg: RunConfig, report: SolveReport, history: ConvergenceHistory | None):
    line = report.to_json()
    if cfg.report_path:
        Path(cfg.report_path).write_text(line + "\n")
    if cfg.history_path and history is not None and history.records:
        emit_history(history, cfg.history_path)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixedldu", description=__doc__.splitlines()[0])
    p.add_argument("--matrix", required=True, help="Matrix Market file")
    p.add_argument("--tau", type=float, default=0.05, help="postponing threshold in (0, 1)")
    p.add_argument("--levels", type=int, default=None, help="bisection tree levels")
    p.add_argument("--n-extra", type=int, default=4, help="extra pivots moved to the hard part")
    p.add_argument("--pair", default="f32f64", choices=["f32f64", "f64dd"])
    p.add_argument("--pure", default=None, choices=["f32", "f64", "dd"],
                   help="direct factorization in one precision instead of the mixed pair")
    p.add_argument("--method", default="bgcr", choices=["ir", "gcr", "bgcr"])
    p.add_argument("--tol", type=float, default=None, help="relative residual (default 50 eps)")
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--rhs", default="mod11", help="mod11 | file:PATH | seed:N")
    p.add_argument("--history", default=None, help="CSV convergence history")
    p.add_argument("--report", default=None, help="JSON report (also printed)")
    p.add_argument("--solution", default=None, help="write the computed solution")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig(args.matrix, args.tau, args.levels, args.n_extra, args.pair, args.pure,
                        args.method, args.tol, args.max_iter, args.rhs, args.history,
                        args.report, args.solution)
        report = run(cfg)
    except (OSError, ValueError) as exc:
        print(f"mixedldu: error: {exc}", file=sys.stderr)
        return 1
    print(report.to_json())
    return 0 if report.status == "ok" else 2


if __name__ == "__main__":
    sys.exit(main())
