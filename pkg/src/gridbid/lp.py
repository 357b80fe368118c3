"""Sparse LP container, HiGHS backend, and dual-certificate checks.

Sign conventions (fixed, everything downstream relies on them):

    minimize c'x  subject to rows a_r'x {<=,==,>=} b_r  and  lo <= x <= hi

    Lagrangian  L = c'x - sum_r y_r (a_r'x - b_r)
                       - sum_j lam_lo_j (x_j - lo_j) - sum_j lam_hi_j (hi_j - x_j)

    so that  y_r = d(obj)/d(b_r)  for every row, with
        '>=' rows: y_r >= 0,   '<=' rows: y_r <= 0,   '==' rows: y_r free,
    and lam_lo, lam_hi >= 0.  At an optimum:
        stationarity   c = A'y + lam_lo - lam_hi
        dual objective g = y'b + lam_lo'lo - lam_hi'hi
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

INF = float("inf")

LE, EQ, GE = "<=", "==", ">="
_RELATIONS = (LE, EQ, GE)


class LpError(Exception):
    """Malformed model or misuse of the LP layer."""


class SolverFailure(Exception):
    """A solve that was expected to reach optimality did not."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITERATION_LIMIT = "iteration-limit"


class LpModel:
    """Standard-form LP with named (tagged) variables and rows.

    Rows and variables are appended freely until :meth:`freeze`, after which
    the model is immutable and ready for a backend.  Duplicate (row, var)
    coefficient entries are summed.
    """

    def __init__(self, name="lp"):
        self.name = name
        self._var_names = []
        self._var_index = {}
        self._lo = []
        self._hi = []
        self._cost = []
        self._row_names = []
        self._row_index = {}
        self._rel = []
        self._rhs = []
        self._coef_row = []
        self._coef_col = []
        self._coef_val = []
        self._frozen = False
        self.meta = {}

    # -- construction ------------------------------------------------------

    def add_var(self, name, lo=0.0, hi=INF, cost=0.0):
        if self._frozen:
            raise LpError("model is frozen")
        if name in self._var_index:
            raise LpError(f"duplicate variable {name!r}")
        if lo > hi:
            raise LpError(f"variable {name!r} has lo {lo} > hi {hi}")
        idx = len(self._var_names)
        self._var_index[name] = idx
        self._var_names.append(name)
        self._lo.append(float(lo))
        self._hi.append(float(hi))
        self._cost.append(float(cost))
        return idx

    def add_row(self, name, coeffs, rel, rhs):
        """coeffs is an iterable of (var_index, coefficient)."""
        if self._frozen:
            raise LpError("model is frozen")
        if rel not in _RELATIONS:
            raise LpError(f"unknown relation {rel!r}")
        if name in self._row_index:
            raise LpError(f"duplicate row tag {name!r}")
        ridx = len(self._row_names)
        self._row_index[name] = ridx
        self._row_names.append(name)
        self._rel.append(rel)
        self._rhs.append(float(rhs))
        nvar = len(self._var_names)
        for j, v in coeffs:
            if not 0 <= j < nvar:
                raise LpError(f"row {name!r} references unknown variable index {j}")
            self._coef_row.append(ridx)
            self._coef_col.append(j)
            self._coef_val.append(float(v))
        return ridx

    def set_var_bounds(self, idx, lo, hi):
        if self._frozen:
            raise LpError("model is frozen")
        if lo > hi:
            raise LpError(f"variable {self._var_names[idx]!r} lo {lo} > hi {hi}")
        self._lo[idx] = float(lo)
        self._hi[idx] = float(hi)

    def set_var_cost(self, idx, cost):
        if self._frozen:
            raise LpError("model is frozen")
        self._cost[idx] = float(cost)

    def set_row_relation(self, idx, rel):
        if self._frozen:
            raise LpError("model is frozen")
        if rel not in _RELATIONS:
            raise LpError(f"unknown relation {rel!r}")
        self._rel[idx] = rel

    def clone(self):
        """Unfrozen structural copy (used by branch-and-bound node edits)."""
        m = LpModel(self.name)
        m._var_names = list(self._var_names)
        m._var_index = dict(self._var_index)
        m._lo = list(self._lo)
        m._hi = list(self._hi)
        m._cost = list(self._cost)
        m._row_names = list(self._row_names)
        m._row_index = dict(self._row_index)
        m._rel = list(self._rel)
        m._rhs = list(self._rhs)
        m._coef_row = list(self._coef_row)
        m._coef_col = list(self._coef_col)
        m._coef_val = list(self._coef_val)
        m.meta = dict(self.meta)
        return m

    def freeze(self):
        if self._frozen:
            return self
        self.c = np.asarray(self._cost, dtype=float)
        self.lo = np.asarray(self._lo, dtype=float)
        self.hi = np.asarray(self._hi, dtype=float)
        self.rhs = np.asarray(self._rhs, dtype=float)
        self.rel = np.asarray(self._rel, dtype=object)
        n, m = len(self._var_names), len(self._row_names)
        self.A = sp.csr_matrix(
            (self._coef_val, (self._coef_row, self._coef_col)), shape=(m, n)
        )
        self.A.sum_duplicates()
        self._frozen = True
        return self

    # -- introspection -----------------------------------------------------

    @property
    def n_vars(self):
        return len(self._var_names)

    @property
    def n_rows(self):
        return len(self._row_names)

    @property
    def frozen(self):
        return self._frozen

    @property
    def var_names(self):
        return self._var_names

    @property
    def row_names(self):
        return self._row_names

    def var_index(self, name):
        return self._var_index[name]

    def row_index(self, name):
        return self._row_index[name]

    def row_relation(self, idx):
        return self._rel[idx]

    def row_rhs(self, idx):
        return self._rhs[idx]

    def var_cost(self, idx):
        return self._cost[idx]


@dataclass
class LpSolution:
    """Primal/dual certificate for a frozen :class:`LpModel`.

    ``y`` follows the module sign convention; ``reduced_costs`` is
    ``c - A'y`` and the bound multipliers are its canonical nonnegative
    split (robust to the arbitrary splits backends report for fixed
    variables).
    """

    status: LpStatus
    objective: float | None
    x: np.ndarray | None
    y: np.ndarray | None
    reduced_costs: np.ndarray | None
    lam_lo: np.ndarray | None
    lam_hi: np.ndarray | None
    model: LpModel
    message: str = ""

    def value(self, name):
        return float(self.x[self.model.var_index(name)])

    def dual(self, row_name):
        return float(self.y[self.model.row_index(row_name)])

    def row_slacks(self):
        """a_r'x - b_r per row (signed; >= 0 for feasible '>=' rows)."""
        return self.model.A @ self.x - self.model.rhs


@dataclass
class DualityReport:
    primal_residual: float
    dual_residual: float
    complementarity_residual: float
    gap: float
    ok: bool
    violations: list = field(default_factory=list)


class HighsBackend:
    """LP backend on scipy's HiGHS interface.

    Deterministic for identical input (single-threaded dual simplex).
    One instance may be reused sequentially; it keeps no per-solve state.
    """

    name = "highs"
    capabilities = frozenset({"lp"})

    def __init__(self, feas_tol=1e-7, gap_tol=1e-6, time_limit=None, audit=False):
        self.feas_tol = float(feas_tol)
        self.gap_tol = float(gap_tol)
        self.time_limit = time_limit
        self.audit = bool(audit)
        self.audit_log = []

    def solve(self, model, time_limit=None):
        if not model.frozen:
            model.freeze()
        rel = model.rel
        eq_mask = rel == EQ
        le_mask = rel == LE
        ge_mask = rel == GE
        A_eq = model.A[eq_mask] if eq_mask.any() else None
        b_eq = model.rhs[eq_mask] if eq_mask.any() else None
        ub_mask = le_mask | ge_mask
        A_ub = None
        b_ub = None
        if ub_mask.any():
            sign = np.where(le_mask[ub_mask], 1.0, -1.0)
            A_ub = sp.diags(sign) @ model.A[ub_mask]
            b_ub = sign * model.rhs[ub_mask]
        bounds = np.column_stack([model.lo, model.hi])
        options = {"presolve": True}
        limit = time_limit if time_limit is not None else self.time_limit
        if limit is not None:
            options["time_limit"] = float(limit)
        res = linprog(
            c=model.c,
            A_ub=A_ub,
            b_ub=b_ub,
            A_eq=A_eq,
            b_eq=b_eq,
            bounds=bounds,
            method="highs",
            options=options,
        )
        status = {
            0: LpStatus.OPTIMAL,
            1: LpStatus.ITERATION_LIMIT,
            2: LpStatus.INFEASIBLE,
            3: LpStatus.UNBOUNDED,
            4: LpStatus.ITERATION_LIMIT,
        }[res.status]
        if status is not LpStatus.OPTIMAL:
            return LpSolution(status, None, None, None, None, None, None,
                              model, res.message)
        x = np.asarray(res.x, dtype=float)
        y = np.zeros(model.n_rows)
        if eq_mask.any():
            y[eq_mask] = res.eqlin.marginals
        if ub_mask.any():
            y[ub_mask] = sign * res.ineqlin.marginals
        # Canonical bound multipliers from reduced costs; this makes the
        # certificate unique under degenerate (fixed-variable) splits.
        rc = model.c - model.A.T @ y
        lam_lo = np.where(np.isfinite(model.lo), np.maximum(rc, 0.0), 0.0)
        lam_hi = np.where(np.isfinite(model.hi), np.maximum(-rc, 0.0), 0.0)
        sol = LpSolution(status, float(res.fun), x, y, rc, lam_lo, lam_hi, model)
        if self.audit:
            rep = check_duality(model, sol, feas_tol=self.feas_tol,
                                gap_tol=self.gap_tol)
            self.audit_log.append((model.name, rep.ok, rep))
        return sol


def check_duality(model, sol, feas_tol=1e-7, gap_tol=1e-6):
    """Residuals of the optimality certificate carried by ``sol``.

    Flags anything above tolerance: primal feasibility, stationarity and
    dual sign conditions, complementary slackness (rows and bounds), and
    the primal/dual objective gap.
    """
    if sol.status is not LpStatus.OPTIMAL:
        raise LpError("check_duality requires an optimal solution")
    A, rhs, rel = model.A, model.rhs, model.rel
    x, y = sol.x, sol.y
    slack = A @ x - rhs
    scale = 1.0 + np.abs(rhs)
    viols = []

    primal = 0.0
    for r in range(model.n_rows):
        if rel[r] == EQ:
            v = abs(slack[r]) / scale[r]
        elif rel[r] == LE:
            v = max(slack[r], 0.0) / scale[r]
        else:
            v = max(-slack[r], 0.0) / scale[r]
        if v > primal:
            primal = v
    lo_viol = np.maximum(model.lo - x, 0.0)
    hi_viol = np.maximum(x - model.hi, 0.0)
    finite = np.isfinite(model.lo)
    if finite.any():
        primal = max(primal, float(np.max(lo_viol[finite] / (1 + np.abs(model.lo[finite])))))
    finite = np.isfinite(model.hi)
    if finite.any():
        primal = max(primal, float(np.max(hi_viol[finite] / (1 + np.abs(model.hi[finite])))))

    # dual residual: stationarity plus sign conditions
    stat = model.c - A.T @ y - sol.lam_lo + sol.lam_hi
    dual = float(np.max(np.abs(stat))) if model.n_vars else 0.0
    for r in range(model.n_rows):
        if rel[r] == GE and y[r] < -feas_tol:
            dual = max(dual, -y[r])
            viols.append(("dual_sign", model.row_names[r], y[r]))
        elif rel[r] == LE and y[r] > feas_tol:
            dual = max(dual, y[r])
            viols.append(("dual_sign", model.row_names[r], y[r]))

    comp = 0.0
    for r in range(model.n_rows):
        if rel[r] == EQ:
            continue
        v = abs(y[r] * slack[r]) / scale[r]
        if v > comp:
            comp = v
        if v > 1e-6 * (1 + abs(rhs[r])):
            viols.append(("complementarity", model.row_names[r], v))
    with np.errstate(invalid="ignore"):
        blo = np.abs(sol.lam_lo * (x - model.lo))
        bhi = np.abs(sol.lam_hi * (model.hi - x))
    blo = blo[np.isfinite(model.lo)]
    bhi = bhi[np.isfinite(model.hi)]
    if blo.size:
        comp = max(comp, float(np.max(blo / (1 + np.abs(x[np.isfinite(model.lo)])))))
    if bhi.size:
        comp = max(comp, float(np.max(bhi / (1 + np.abs(x[np.isfinite(model.hi)])))))

    g = float(y @ rhs)
    finite = np.isfinite(model.lo)
    g += float(sol.lam_lo[finite] @ model.lo[finite])
    finite = np.isfinite(model.hi)
    g -= float(sol.lam_hi[finite] @ model.hi[finite])
    primal_obj = float(model.c @ x)
    gap = abs(primal_obj - g) / (1.0 + abs(primal_obj))

    ok = primal <= feas_tol and dual <= 1e-5 and gap <= gap_tol and comp <= 1e-5
    return DualityReport(primal, dual, comp, gap, ok, viols)


def write_mps(model, path):
    """Fixed-format MPS export; tag names beyond 8 chars go into comments."""
    if not model.frozen:
        model.freeze()
    A = model.A.tocsc()
    with open(path, "w") as f:
        f.write(f"* exported model: {model.name}\n")
        f.write("* column/row tag map:\n")
        rows = [f"R{r:07d}" for r in range(model.n_rows)]
        cols = [f"C{j:07d}" for j in range(model.n_vars)]
        for r, tag in enumerate(model.row_names):
            f.write(f"* {rows[r]} = {tag}\n")
        for j, tag in enumerate(model.var_names):
            f.write(f"* {cols[j]} = {tag}\n")
        f.write(f"NAME          {model.name[:8].upper() or 'LP'}\n")
        f.write("ROWS\n")
        f.write(" N  COST\n")
        for r in range(model.n_rows):
            kind = {LE: "L", EQ: "E", GE: "G"}[model.rel[r]]
            f.write(f" {kind}  {rows[r]}\n")
        f.write("COLUMNS\n")
        for j in range(model.n_vars):
            entries = []
            if model.c[j] != 0.0:
                entries.append(("COST", model.c[j]))
            start, end = A.indptr[j], A.indptr[j + 1]
            for k in range(start, end):
                entries.append((rows[A.indices[k]], A.data[k]))
            for i in range(0, len(entries), 2):
                pair = entries[i:i + 2]
                line = f"    {cols[j]:<10}"
                for rname, v in pair:
                    line += f"{rname:<10}{v:<12.6g}"
                f.write(line.rstrip() + "\n")
        f.write("RHS\n")
        for r in range(model.n_rows):
            if model.rhs[r] != 0.0:
                f.write(f"    RHS       {rows[r]:<10}{model.rhs[r]:<12.6g}\n")
        f.write("BOUNDS\n")
        for j in range(model.n_vars):
            lo, hi = model.lo[j], model.hi[j]
            if lo == 0.0 and hi == INF:
                continue
            if lo == -INF and hi == INF:
                f.write(f" FR BND       {cols[j]}\n")
                continue
            if lo == hi:
                f.write(f" FX BND       {cols[j]:<10}{lo:<12.6g}\n")
                continue
            if lo != 0.0:
                if lo == -INF:
                    f.write(f" MI BND       {cols[j]}\n")
                else:
                    f.write(f" LO BND       {cols[j]:<10}{lo:<12.6g}\n")
            if hi != INF:
                f.write(f" UP BND       {cols[j]:<10}{hi:<12.6g}\n")
        f.write("ENDATA\n")


_BACKENDS = {"highs": HighsBackend}


def register_backend(name, factory):
    _BACKENDS[name] = factory


def get_backend(name=None, **kwargs):
    """Backend by name, or by the GRIDBID_BACKEND environment variable."""
    if name is None:
        name = os.environ.get("GRIDBID_BACKEND", "highs")
    try:
        factory = _BACKENDS[name]
    except KeyError:
        raise LpError(f"unknown solver backend {name!r}; "
                      f"registered: {sorted(_BACKENDS)}") from None
    return factory(**kwargs)
