"""Sparse assembly and solvers used by the flow steppers.

Everything here is deliberately thin plumbing over scipy.sparse: triplet
assembly with additive folding, a direct LU solve with a residual certificate,
and a damped Newton driver.  The flow modules own the physics; this module
owns the failure taxonomy of the algebra (SingularMatrixError,
NoConvergenceError).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergenceError, SingularMatrixError

__all__ = [
    "SparseMatrix",
    "assemble",
    "solve_direct",
    "NewtonConfig",
    "newton_solve",
]


class SparseMatrix:
    """Immutable CSR matrix built from (row, col, value) triplets.

    Duplicate triplets are summed on construction (additive folding), and the
    stored entries are unique and sorted by (row, col).
    """

    __slots__ = ("_csr",)

    def __init__(self, csr: sp.csr_matrix):
        csr.sum_duplicates()
        csr.sort_indices()
        self._csr = csr

    @property
    def shape(self) -> Tuple[int, int]:
        return self._csr.shape

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def triplets(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Folded entries as (rows, cols, values), sorted by (row, col)."""
        coo = self._csr.tocoo()
        return coo.row.copy(), coo.col.copy(), coo.data.copy()

    def csr(self) -> sp.csr_matrix:
        return self._csr

    def inf_norm(self) -> float:
        if self.nnz == 0:
            return 0.0
        return float(np.max(np.abs(self._csr).sum(axis=1)))

    def add_diagonal_block(self, offset_rows: int, offset_cols: int,
                           diag: np.ndarray) -> "SparseMatrix":
        """Return a copy with ``diag[i]`` added at (offset_rows+i, offset_cols+i)."""
        n = len(diag)
        idx = np.arange(n)
        extra = sp.coo_matrix(
            (np.asarray(diag, dtype=float), (offset_rows + idx, offset_cols + idx)),
            shape=self.shape,
        )
        return SparseMatrix((self._csr + extra.tocsr()).tocsr())


def assemble(rows, cols, values, shape: Tuple[int, int]) -> SparseMatrix:
    """Fold triplets into a SparseMatrix, summing duplicates.

    Raises IndexError when any index falls outside ``shape``.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if not (rows.shape == cols.shape == values.shape):
        raise ValueError("rows, cols and values must have matching lengths")
    n_rows, n_cols = shape
    if rows.size:
        if rows.min() < 0 or rows.max() >= n_rows:
            raise IndexError("row index out of range")
        if cols.min() < 0 or cols.max() >= n_cols:
            raise IndexError("column index out of range")
    coo = sp.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols))
    return SparseMatrix(coo.tocsr())


#: A U-factor pivot this far below the largest one flags a singular system.
PIVOT_FLOOR_REL = 1e-14


def solve_direct(A: SparseMatrix, b: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    """Solve Ax = b by sparse LU with a residual certificate.

    Singularity is reported on three routes: the factorization fails outright,
    a U pivot collapses relative to the largest one (this catches consistent
    singular systems, where the particular solution would pass the residual
    test), or the residual certificate ||Ax-b||_inf <= rtol*(||A||_inf
    ||x||_inf + ||b||_inf) fails.
    """
    b = np.asarray(b, dtype=float)
    n_rows, n_cols = A.shape
    if n_rows != n_cols:
        raise ValueError("solve_direct requires a square matrix")
    if b.shape != (n_rows,):
        raise ValueError(f"right-hand side has shape {b.shape}, expected ({n_rows},)")
    try:
        with np.errstate(all="ignore"):
            lu = spla.splu(A.csr().tocsc())
            pivots = np.abs(lu.U.diagonal())
            x = lu.solve(b)
    except RuntimeError as exc:  # "Factor is exactly singular"
        raise SingularMatrixError(str(exc)) from exc
    if pivots.size and pivots.min() <= PIVOT_FLOOR_REL * pivots.max():
        raise SingularMatrixError(
            f"pivot ratio {pivots.min() / pivots.max():.3e} below {PIVOT_FLOOR_REL:.0e}"
        )
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("factorization produced non-finite solution")

    def certificate(y):
        residual = float(np.max(np.abs(A @ y - b))) if n_rows else 0.0
        scale = A.inf_norm() * float(np.max(np.abs(y), initial=0.0)) + float(
            np.max(np.abs(b), initial=0.0)
        )
        return residual, rtol * max(scale, 1e-300)

    residual, bound = certificate(x)
    if residual > bound:
        # One pass of iterative refinement recovers badly scaled but
        # well-posed systems (stiff time-step blocks); genuinely singular
        # ones keep failing the certificate.
        refined = x + lu.solve(b - A @ x)
        if np.all(np.isfinite(refined)):
            res2, bound2 = certificate(refined)
            if res2 < residual:
                x, residual, bound = refined, res2, bound2
    if residual > bound:
        raise SingularMatrixError(
            f"residual {residual:.3e} exceeds certificate bound {bound:.3e} (rtol {rtol:.1e})"
        )
    return x


@dataclass(frozen=True)
class NewtonConfig:
    """Damped-Newton controls.

    abs_tol is an absolute bound on ||F||_inf; damping halves the step while
    the residual norm fails to decrease, down to damping_min.
    """

    abs_tol: float = 1e-12
    max_iter: int = 50
    damping_min: float = 1.0 / 64.0

    def __post_init__(self):
        if self.abs_tol <= 0:
            raise ValueError("abs_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.damping_min <= 1:
            raise ValueError("damping_min must lie in (0, 1]")


def newton_solve(
    fun: Callable[[np.ndarray], Tuple[np.ndarray, SparseMatrix]],
    x0: np.ndarray,
    config: NewtonConfig = NewtonConfig(),
) -> Tuple[np.ndarray, int]:
    """Damped Newton iteration for F(x) = 0.

    ``fun`` maps x to (F(x), J(x)).  Returns (x, iterations) where iterations
    counts accepted updates; an already-converged x0 reports 0 and a linear
    residual converges in exactly 1.
    """
    x = np.asarray(x0, dtype=float).copy()
    with np.errstate(all="ignore"):
        F, J = fun(x)
    norm = float(np.max(np.abs(F)))
    iterations = 0
    while True:
        if np.isfinite(norm) and norm <= config.abs_tol:
            return x, iterations
        if iterations >= config.max_iter:
            raise NoConvergenceError(iterations, norm)
        delta = solve_direct(J, -F)
        damping = 1.0
        while True:
            trial = x + damping * delta
            with np.errstate(all="ignore"):
                F_trial, J_trial = fun(trial)
            trial_norm = float(np.max(np.abs(F_trial)))
            if np.isfinite(trial_norm) and trial_norm < norm:
                break
            if damping <= config.damping_min:
                break  # accept the smallest step and let the outer loop judge
            damping *= 0.5
        x, F, J, norm = trial, F_trial, J_trial, trial_norm
        iterations += 1
