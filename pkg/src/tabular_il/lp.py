"""Dense two-phase tableau simplex for small equality-form linear programs.

Solves ``min c.x  s.t.  A x = b, x >= 0``. Entering columns follow Dantzig's
most-negative reduced cost; after a run of degenerate pivots the solver falls
back to Bland's lowest-index rule until the objective moves again, which rules
out cycling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class LPError(RuntimeError):
    def __init__(self, msg, incumbent=None):
        super().__init__(msg)
        self.incumbent = incumbent


class InfeasibleError(LPError):
    pass


class UnboundedError(LPError):
    pass


@dataclass
class LinearProgram:
    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray
    labels: list = field(default_factory=list)
    offset: float = 0.0

    @property
    def num_vars(self) -> int:
        return self.c.shape[0]

    @property
    def num_constraints(self) -> int:
        return self.A_eq.shape[0]


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int
    basis: np.ndarray


PIVOT_TOL = 1e-10
DEGENERATE_RUN = 25


def _pivot(T: np.ndarray, r: int, col: int) -> None:
    T[r] /= T[r, col]
    factors = T[:, col].copy()
    factors[r] = 0.0
    nz = np.nonzero(factors)[0]
    if nz.size:
        T[nz] -= np.outer(factors[nz], T[r])


def _run(T, basis, ncols, max_iter, tol, it0=0):
    """Simplex iterations on tableau ``T`` whose last row is the reduced-cost row."""
    m = T.shape[0] - 1
    it = it0
    degenerate = 0
    while True:
        rc = T[m, :ncols]
        candidates = np.nonzero(rc < -tol)[0]
        if candidates.size == 0:
            return it
        if it >= max_iter:
            raise LPError(f"iteration limit {max_iter} reached")
        bland = degenerate >= DEGENERATE_RUN
        col = int(candidates[0]) if bland else int(candidates[np.argmin(rc[candidates])])
        column = T[:m, col]
        rows = np.nonzero(column > PIVOT_TOL)[0]
        if rows.size == 0:
            raise UnboundedError("objective is unbounded below")
        ratios = T[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12]
        r = int(ties[np.argmin(basis[ties])]) if ties.size > 1 else int(ties[0])
        degenerate = degenerate + 1 if best <= 1e-12 else 0
        _pivot(T, r, col)
        basis[r] = col
        it += 1


def simplex(c, A, b, tol: float = 1e-9, max_iter: int = 50_000) -> LPResult:
    c = np.asarray(c, dtype=float)
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    m, n = A.shape
    neg = b < 0
    A[neg] *= -1
    b[neg] *= -1

    # phase 1: artificial identity basis, minimise the sum of artificials
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -A.sum(axis=0)
    T[m, -1] = -b.sum()
    basis = np.arange(n, n + m)
    it = _run(T, basis, n + m, max_iter, tol)
    if -T[m, -1] > max(1e-8, 1e-9 * max(1.0, b.sum())):
        raise InfeasibleError(f"phase 1 ended with infeasibility {-T[m, -1]:.3g}")

    # drive remaining artificials out of the basis, dropping redundant rows
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        if basis[r] < n:
            continue
        cols = np.nonzero(np.abs(T[r, :n]) > 1e-9)[0]
        if cols.size:
            _pivot(T, r, int(cols[0]))
            basis[r] = int(cols[0])
        else:
            keep[r] = False
    rows = np.nonzero(keep)[0]
    T2 = np.zeros((rows.size + 1, n + 1))
    T2[:-1, :n] = T[rows, :n]
    T2[:-1, -1] = T[rows, -1]
    basis = basis[rows]

    # phase 2
    cb = c[basis]
    T2[-1, :n] = c - cb @ T2[:-1, :n]
    T2[-1, -1] = -cb @ T2[:-1, -1]
    try:
        it = _run(T2, basis, n, max_iter, tol, it0=it)
    except LPError as err:
        err.incumbent = _basic_solution(A[rows], b[rows], basis, n, T2)
        raise
    x = _basic_solution(A[rows], b[rows], basis, n, T2)
    return LPResult(x, float(c @ x), it, basis)


def _basic_solution(A, b, basis, n, T):
    """Recompute the basic variables from the original data to shed pivoting round-off."""
    x = np.zeros(n)
    try:
        xb = np.linalg.solve(A[:, basis], b)
    except np.linalg.LinAlgError:
        xb = T[:-1, -1]
    x[basis] = np.clip(xb, 0.0, None)
    return x


def solve(lp: LinearProgram, tol: float = 1e-9, backend: str = "simplex", max_iter: int = 50_000) -> LPResult:
    """Solve ``lp``; ``backend="highs"`` delegates to SciPy for cross-checking."""
    if backend == "simplex":
        res = simplex(lp.c, lp.A_eq, lp.b_eq, tol=tol, max_iter=max_iter)
    elif backend == "highs":
        from scipy.optimize import linprog

        out = linprog(lp.c, A_eq=lp.A_eq, b_eq=lp.b_eq, bounds=(0, None), method="highs")
        if out.status != 0:
            raise LPError(f"HiGHS failed: {out.message}")
        x = np.clip(out.x, 0.0, None)
        res = LPResult(x, float(lp.c @ x), int(out.nit), np.array([], dtype=int))
    else:
        raise ValueError(f"unknown LP backend {backend!r}")
    res.objective += lp.offset
    return res
