"""Dense two-phase tableau simplex for small inequality-form LPs.

Solves ``min c^T x  s.t.  A x <= b, x >= 0``. Pivoting follows Bland's
rule (lowest-index entering column, lowest-index leaving basic variable on
ratio ties), which terminates on degenerate problems and makes the returned
vertex a deterministic function of the input.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-11


class LPInfeasible(ValueError):
    pass


class LPUnbounded(ValueError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    iterations: int


def _pivot(t: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    t[row] /= t[row, col]
    factor = t[:, col].copy()
    factor[row] = 0.0
    t -= np.outer(factor, t[row])
    basis[row] = col


def _run(t: np.ndarray, basis: np.ndarray, allowed: np.ndarray, max_iter: int) -> int:
    """Bland iterations on tableau ``t`` whose last row holds reduced costs."""
    m = t.shape[0] - 1
    for it in range(max_iter):
        cost = t[-1, :-1]
        candidates = np.flatnonzero((cost < -PIVOT_TOL) & allowed)
        if candidates.size == 0:
            return it
        col = candidates[0]
        column = t[:m, col]
        pos = column > PIVOT_TOL
        if not pos.any():
            raise LPUnbounded("objective is unbounded below")
        ratios = np.full(m, np.inf)
        ratios[pos] = t[:m, -1][pos] / column[pos]
        best = ratios.min()
        tied = np.flatnonzero(ratios <= best + PIVOT_TOL * max(1.0, abs(best)))
        row = tied[np.argmin(basis[tied])]
        _pivot(t, basis, row, col)
    raise RuntimeError("simplex iteration limit reached")


def linprog_bland(c, a_ub, b_ub, max_iter: int = 50_000) -> LPResult:
    c = np.asarray(c, dtype=np.float64)
    a = np.asarray(a_ub, dtype=np.float64)
    b = np.asarray(b_ub, dtype=np.float64)
    m, n = a.shape

    # equality form [A | I] [x; s] = b, rows flipped so the rhs is nonnegative
    sign = np.where(b < 0, -1.0, 1.0)
    a_eq = np.hstack([a, np.eye(m)]) * sign[:, None]
    rhs = b * sign
    needs_art = np.flatnonzero(sign < 0)
    k = needs_art.size
    n_struct = n + m

    t = np.zeros((m + 1, n_struct + k + 1))
    t[:m, :n_struct] = a_eq
    t[:m, -1] = rhs
    basis = n + np.arange(m)
    for i, r in enumerate(needs_art):
        t[r, n_struct + i] = 1.0
        basis[r] = n_struct + i

    iters = 0
    if k:
        t[-1, n_struct:n_struct + k] = 1.0
        for r in needs_art:
            t[-1] -= t[r]
        iters += _run(t, basis, np.ones(n_struct + k, dtype=bool), max_iter)
        if -t[-1, -1] > 1e-9 * max(1.0, np.abs(rhs).max()):
            raise LPInfeasible("no feasible point")
        for r in np.flatnonzero(basis >= n_struct):
            nz = np.flatnonzero(np.abs(t[r, :n_struct]) > PIVOT_TOL)
            if nz.size:
                _pivot(t, basis, r, nz[0])

    t[-1] = 0.0
    t[-1, :n] = c
    for r in range(m):
        if basis[r] < n_struct:
            t[-1] -= t[-1, basis[r]] * t[r]
    allowed = np.zeros(n_struct + k, dtype=bool)
    allowed[:n_struct] = True
    iters += _run(t, basis, allowed, max_iter)

    x_full = np.zeros(n_struct + k)
    x_full[basis] = t[:m, -1]
    # re-solve the final basis against the original data to shed pivoting roundoff
    structural = basis < n_struct
    if structural.all():
        try:
            xb = np.linalg.solve(a_eq[:, basis], rhs)
            if np.all(xb >= -1e-9):
                x_full[:] = 0.0
                x_full[basis] = np.maximum(xb, 0.0)
        except np.linalg.LinAlgError:
            pass
    x = np.maximum(x_full[:n], 0.0)
    return LPResult(x=x, fun=float(c @ x), iterations=iters)
