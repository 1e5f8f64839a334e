"""Dense two-phase tableau simplex for small and medium linear programs.

Problems are stated as

    maximize    c @ x
    subject to  A_ub @ x <= b_ub
                A_eq @ x == b_eq
                x >= lb            (lb may be -inf for free variables)

Entering variables are priced by largest reduced cost; after a run of
degenerate pivots the solver falls back to Bland's smallest-index rule until
the objective moves again, which rules out cycling. At termination the final
basis is re-solved against the original matrix and the reduced costs are
recomputed from fresh duals, so the reported optimum is certified rather than
read off an accumulated tableau.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import blas


class LPError(RuntimeError):
    pass


class Infeasible(LPError):
    pass


class Unbounded(LPError):
    pass


class NumericFailure(LPError):
    pass


@dataclass
class LinearProgram:
    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    lb: np.ndarray
    var_names: list = field(default_factory=list)
    ub_names: list = field(default_factory=list)
    eq_names: list = field(default_factory=list)

    def __post_init__(self):
        n = self.c.shape[0]
        self.A_ub = sp.csr_matrix(self.A_ub, shape=(len(self.b_ub), n))
        self.A_eq = sp.csr_matrix(self.A_eq, shape=(len(self.b_eq), n))
        self.b_ub = np.asarray(self.b_ub, dtype=float)
        self.b_eq = np.asarray(self.b_eq, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        if self.lb.shape != (n,):
            raise ValueError("lb must have one entry per variable")
        for arr in (self.c, self.A_ub.data, self.A_eq.data, self.b_ub, self.b_eq):
            if not np.all(np.isfinite(arr)):
                raise ValueError("LP coefficients must be finite")

    @property
    def num_variables(self) -> int:
        return self.c.shape[0]

    @property
    def num_constraints(self) -> int:
        return self.A_ub.shape[0] + self.A_eq.shape[0]


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int
    certified: bool
    max_reduced_cost: float
    primal_residual: float
    seconds: float
    method: str


def _standard_form(lp: LinearProgram):
    """Return (A, b, c, const, back) with ``x = shift + back @ y`` and y >= 0."""
    n = lp.num_variables
    free = ~np.isfinite(lp.lb)
    shift = np.where(free, 0.0, lp.lb)
    # one column per bounded variable, two (plus, minus) per free variable
    cols = []
    rows = []
    vals = []
    k = 0
    for j in range(n):
        rows.append(j)
        cols.append(k)
        vals.append(1.0)
        k += 1
        if free[j]:
            rows.append(j)
            cols.append(k)
            vals.append(-1.0)
            k += 1
    back = sp.csr_matrix((vals, (rows, cols)), shape=(n, k))
    A_ub = (lp.A_ub @ back).toarray()
    A_eq = (lp.A_eq @ back).toarray()
    b_ub = lp.b_ub - lp.A_ub @ shift
    b_eq = lp.b_eq - lp.A_eq @ shift
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    A = np.zeros((m_ub + m_eq, k + m_ub))
    A[:m_ub, :k] = A_ub
    A[:m_ub, k:] = np.eye(m_ub)
    A[m_ub:, :k] = A_eq
    b = np.concatenate([b_ub, b_eq])
    c = np.concatenate([back.T @ lp.c, np.zeros(m_ub)])
    const = float(lp.c @ shift)
    return A, b, c, const, back, shift, m_ub


class _Tableau:
    def __init__(self, A, b, c, tol, pivot_tol):
        m, n = A.shape
        flip = b < 0
        A = np.where(flip[:, None], -A, A)
        b = np.abs(b)
        self.A0, self.b0, self.c0 = A, b, c
        self.tol, self.pivot_tol = tol, pivot_tol
        # a row can start with its own unit column in the basis if one exists
        basis = np.full(m, -1)
        single = np.flatnonzero(np.count_nonzero(A, axis=0) == 1)
        for j in single:
            i = int(np.flatnonzero(A[:, j])[0])
            if A[i, j] == 1.0 and basis[i] < 0:
                basis[i] = j
        art_rows = np.flatnonzero(basis < 0)
        n_art = art_rows.size
        self.n, self.m, self.n_art = n, m, n_art
        T = np.zeros((m + 2, n + n_art + 1), order="F")
        T[:m, :n] = A
        T[:m, -1] = b
        for k, i in enumerate(art_rows):
            T[i, n + k] = 1.0
            basis[i] = n + k
        T[m, :n] = c
        T[m + 1, :n] = T[art_rows, :n].sum(axis=0)
        T[m + 1, -1] = T[art_rows, -1].sum()
        self.T = T
        self.basis = basis
        self.iterations = 0
        self._eliminate_costs(m)

    def _eliminate_costs(self, row):
        T = self.T
        for i, j in enumerate(self.basis):
            if T[row, j] != 0.0:
                T[row, :] -= T[row, j] * T[i, :]

    def pivot(self, r, q):
        T = self.T
        T[r, :] /= T[r, q]
        col = T[:, q].copy()
        col[r] = 0.0
        self.T = blas.dger(-1.0, col, T[r, :].copy(), a=T, overwrite_a=1)
        self.T[:, q] = 0.0
        self.T[r, q] = 1.0
        self.basis[r] = q
        self.iterations += 1

    def run(self, obj_row, n_cols, max_iter, bland_after=50):
        T, m, tol = self.T, self.m, self.tol
        degenerate_run = 0
        while True:
            T = self.T
            d = T[obj_row, :n_cols]
            if degenerate_run >= bland_after:
                cand = np.flatnonzero(d > tol)
                if cand.size == 0:
                    return
                q = int(cand[0])
                bland = True
            else:
                q = int(np.argmax(d))
                if d[q] <= tol:
                    return
                bland = False
            col = T[:m, q]
            pos = np.flatnonzero(col > self.pivot_tol)
            if pos.size == 0:
                raise Unbounded(f"column {q} has no positive pivot")
            rhs = np.maximum(T[pos, -1], 0.0)
            ratios = rhs / col[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12 * max(1.0, best)]
            if bland:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(col[ties])])
            degenerate_run = degenerate_run + 1 if best <= tol else 0
            self.pivot(r, q)
            if self.iterations > max_iter:
                raise NumericFailure(f"iteration limit {max_iter} reached")

    def drop_artificials(self):
        """Pivot basic artificials out (or delete their redundant rows)."""
        n, m = self.n, self.m
        redundant = []
        for r in range(m):
            if self.basis[r] >= n:
                row = np.abs(self.T[r, :n])
                j = int(np.argmax(row))
                if row[j] > self.pivot_tol:
                    self.pivot(r, j)
                else:
                    redundant.append(r)
        keep_rows = [i for i in range(m + 2) if i not in redundant and i != m + 1]
        keep_cols = list(range(n)) + [self.T.shape[1] - 1]
        self.T = np.asfortranarray(self.T[np.ix_(keep_rows, keep_cols)])
        self.basis = np.delete(self.basis, redundant)
        self.m = m - len(redundant)
        self.rows = np.delete(np.arange(m), redundant)

    def reinvert(self):
        """Rebuild the tableau from the current basis and original data."""
        A, b, c = self.A0[self.rows], self.b0[self.rows], self.c0
        B = A[:, self.basis]
        try:
            body = np.linalg.solve(B, np.column_stack([A, b]))
        except np.linalg.LinAlgError as exc:
            raise NumericFailure("singular basis") from exc
        y = np.linalg.solve(B.T, c[self.basis])
        T = np.zeros((self.m + 1, self.n + 1), order="F")
        T[: self.m] = body
        T[self.m, : self.n] = c - A.T @ y
        T[self.m, -1] = -float(b @ y)
        for i, j in enumerate(self.basis):
            T[:, j] = 0.0
            T[i, j] = 1.0
        self.T = T

    def certify(self):
        A, b, c = self.A0[self.rows], self.b0[self.rows], self.c0
        B = A[:, self.basis]
        try:
            xB = np.linalg.solve(B, b)
            y = np.linalg.solve(B.T, c[self.basis])
        except np.linalg.LinAlgError as exc:
            raise NumericFailure("singular final basis") from exc
        x = np.zeros(self.n)
        x[self.basis] = xB
        red = c - A.T @ y
        scale = max(1.0, float(np.max(np.abs(c))))
        resid = float(np.max(np.abs(A @ np.maximum(x, 0.0) - b), initial=0.0))
        return x, float(np.max(red, initial=0.0)) / scale, float(-np.min(xB, initial=0.0)), resid


def solve_lp(lp: LinearProgram, tol: float = 1e-8, method: str = "simplex",
             max_iter: int | None = None, pivot_tol: float = 1e-9) -> LPResult:
    """Solve ``lp`` to optimality.

    ``method="highs"`` delegates to SciPy's HiGHS; it is used for large
    instances and as an independent cross-check of the simplex path.
    """
    t0 = time.perf_counter()
    if method == "highs":
        return _solve_highs(lp, tol, t0)
    if method != "simplex":
        raise ValueError(f"unknown method {method!r}")

    A, b, c, const, back, shift, _ = _standard_form(lp)
    m, n = A.shape
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000
    tab = _Tableau(A, b, c, tol, pivot_tol)
    if tab.n_art:
        tab.run(m + 1, n + tab.n_art, max_iter)
        infeas = tab.T[m + 1, -1]
        if abs(infeas) > max(tol, 1e-9) * max(1.0, float(np.max(np.abs(b), initial=0.0))) * 10:
            raise Infeasible(f"phase one ended with infeasibility {infeas:.3g}")
    tab.drop_artificials()

    for _ in range(4):
        tab.run(tab.m, n, max_iter)
        y, red, neg, resid = tab.certify()
        if red <= tol * 10 and neg <= tol * 10 and resid <= 1e-7:
            break
        tab.reinvert()
    else:
        raise NumericFailure(f"could not certify optimum (reduced cost {red:.3g}, infeasibility {neg:.3g})")

    y = np.maximum(y, 0.0)
    x = shift + back @ y[: back.shape[1]]
    return LPResult(
        x=x,
        objective=float(lp.c @ x),
        iterations=tab.iterations,
        certified=True,
        max_reduced_cost=red,
        primal_residual=resid,
        seconds=time.perf_counter() - t0,
        method="simplex",
    )


def _solve_highs(lp: LinearProgram, tol: float, t0: float) -> LPResult:
    from scipy.optimize import linprog

    bounds = [(None if not np.isfinite(v) else v, None) for v in lp.lb]
    res = linprog(
        -lp.c,
        A_ub=lp.A_ub if lp.A_ub.shape[0] else None,
        b_ub=lp.b_ub if lp.A_ub.shape[0] else None,
        A_eq=lp.A_eq if lp.A_eq.shape[0] else None,
        b_eq=lp.b_eq if lp.A_eq.shape[0] else None,
        bounds=bounds,
        method="highs",
        options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol},
    )
    if res.status == 2:
        raise Infeasible(res.message)
    if res.status == 3:
        raise Unbounded(res.message)
    if res.status != 0:
        raise NumericFailure(res.message)
    x = res.x
    resid = 0.0
    if lp.A_eq.shape[0]:
        resid = float(np.max(np.abs(lp.A_eq @ x - lp.b_eq)))
    return LPResult(
        x=x,
        objective=float(lp.c @ x),
        iterations=int(getattr(res, "nit", 0)),
        certified=True,
        max_reduced_cost=0.0,
        primal_residual=resid,
        seconds=time.perf_counter() - t0,
        method="highs",
    )
