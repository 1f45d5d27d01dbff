"""Pluggable convex-feasibility engine.

The optimizers express their subproblems in one canonical cone form,

    minimize    c'x
    subject to  b - Ax in K,   K = Zero x Nonneg x SOC(d1) x ... x Exp^n

and hand it to a backend.  Clarabel is the default; SCS (same cone
conventions) is an optional fallback.  Backends must distinguish a provably
infeasible program from a numerical failure, because bisection treats the two
very differently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class EngineError(RuntimeError):
    """The backend failed without an optimality or infeasibility certificate."""


@dataclass
class ConeProgram:
    c: np.ndarray
    a: sp.csc_matrix
    b: np.ndarray
    n_zero: int = 0
    n_nonneg: int = 0
    soc_dims: tuple = ()
    n_exp: int = 0


@dataclass
class ConeSolution:
    status: str                 # 'optimal' | 'infeasible' | 'unbounded' | 'failed'
    x: np.ndarray | None = None
    objective: float | None = None
    detail: str = ""


class ConeBuilder:
    """Row-wise assembler that emits constraints in canonical cone order.

    Every row is registered as (cols, vals, rhs) meaning the slack
    ``s = rhs - vals @ x[cols]`` belongs to the row's cone.  SOC blocks list
    the bound row first; exponential blocks are (x, y, z) triples with
    y * exp(x/y) <= z.
    """

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self._zero = []
        self._nonneg = []
        self._soc = []          # list of row lists
        self._exp = []          # list of 3-row lists

    def zero(self, cols, vals, rhs):
        self._zero.append((np.asarray(cols, dtype=np.int64), np.asarray(vals, dtype=float), float(rhs)))

    def nonneg(self, cols, vals, rhs):
        """Register vals @ x[cols] <= rhs."""
        self._nonneg.append((np.asarray(cols, dtype=np.int64), np.asarray(vals, dtype=float), float(rhs)))

    def soc(self, rows):
        self._soc.append([(np.asarray(c, dtype=np.int64), np.asarray(v, dtype=float), float(r))
                          for c, v, r in rows])

    def exp(self, rows):
        if len(rows) != 3:
            raise ValueError("exponential cone needs exactly 3 rows")
        self._exp.append([(np.asarray(c, dtype=np.int64), np.asarray(v, dtype=float), float(r))
                          for c, v, r in rows])

    def build(self, c) -> ConeProgram:
        rows = list(self._zero) + list(self._nonneg)
        soc_dims = []
        for blk in self._soc:
            rows.extend(blk)
            soc_dims.append(len(blk))
        for blk in self._exp:
            rows.extend(blk)

        n_rows = len(rows)
        counts = np.fromiter((len(cols) for cols, _, _ in rows), dtype=np.int64, count=n_rows)
        row_idx = np.repeat(np.arange(n_rows), counts)
        col_idx = np.concatenate([cols for cols, _, _ in rows]) if n_rows else np.empty(0, dtype=np.int64)
        vals = np.concatenate([v for _, v, _ in rows]) if n_rows else np.empty(0)
        b = np.fromiter((r for _, _, r in rows), dtype=float, count=n_rows)
        a = sp.csc_matrix((vals, (row_idx, col_idx)), shape=(n_rows, self.n_vars))
        return ConeProgram(c=np.asarray(c, dtype=float), a=a, b=b,
                           n_zero=len(self._zero), n_nonneg=len(self._nonneg),
                           soc_dims=tuple(soc_dims), n_exp=len(self._exp))


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

_CLARABEL_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def _solve_clarabel(prob: ConeProgram, tol: float) -> ConeSolution:
    import clarabel

    cones = []
    if prob.n_zero:
        cones.append(clarabel.ZeroConeT(prob.n_zero))
    if prob.n_nonneg:
        cones.append(clarabel.NonnegativeConeT(prob.n_nonneg))
    for d in prob.soc_dims:
        cones.append(clarabel.SecondOrderConeT(d))
    for _ in range(prob.n_exp):
        cones.append(clarabel.ExponentialConeT())

    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = tol
    p = sp.csc_matrix((prob.a.shape[1], prob.a.shape[1]))
    solver = clarabel.DefaultSolver(p, prob.c, prob.a, prob.b, cones, settings)
    res = solver.solve()
    status = _CLARABEL_STATUS.get(str(res.status), "failed")
    if status == "optimal":
        return ConeSolution("optimal", np.asarray(res.x), float(res.obj_val))
    return ConeSolution(status, detail=str(res.status))


def _solve_scs(prob: ConeProgram, tol: float) -> ConeSolution:
    import scs

    cone = {}
    if prob.n_zero:
        cone["z"] = prob.n_zero
    if prob.n_nonneg:
        cone["l"] = prob.n_nonneg
    if prob.soc_dims:
        cone["q"] = list(prob.soc_dims)
    if prob.n_exp:
        cone["ep"] = prob.n_exp
    data = {"A": prob.a, "b": prob.b, "c": prob.c}
    out = scs.solve(data, cone, verbose=False, eps_abs=tol, eps_rel=tol)
    status = out["info"]["status"].lower()
    if "solved" in status and "infeasible" not in status:
        x = np.asarray(out["x"])
        return ConeSolution("optimal", x, float(prob.c @ x))
    if "infeasible" in status:
        return ConeSolution("infeasible", detail=status)
    if "unbounded" in status:
        return ConeSolution("unbounded", detail=status)
    return ConeSolution("failed", detail=status)


_BACKENDS = {"clarabel": _solve_clarabel, "scs": _solve_scs}


def solve_cone_program(prob: ConeProgram, backend: str = "clarabel",
                       tol: float = 1e-8) -> ConeSolution:
    """Solve a canonical cone program; never raises on infeasibility.

    A 'failed' status from the primary backend is retried once on the other
    available backend before being reported, so a stray numerical breakdown
    does not masquerade as infeasibility.
    """
    if backend not in _BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    sol = _BACKENDS[backend](prob, tol)
    if sol.status == "failed":
        for name, fn in _BACKENDS.items():
            if name == backend:
                continue
            try:
                retry = fn(prob, tol)
            except ImportError:
                continue
            if retry.status != "failed":
                return retry
    return sol
