"""Direct solution of the assembled saddle-point systems.

Sparse LU (SuperLU, partial pivoting) for large systems, dense LU below
``DENSE_THRESHOLD`` unknowns. Every solve is followed by iterative refinement
with residuals accumulated in extended precision; the final residual is
recomputed from the original matrix and inaccurate answers are refused.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_THRESHOLD = 2000
RESIDUAL_TOL = 1e-10


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SingularMatrixError(SolverError):
    def __init__(self, message, pivot=None, report=None):
        super().__init__(message, report)
        self.pivot = pivot


class ResidualError(SolverError):
    pass


@dataclass
class SolveReport:
    residual: float
    pivot_growth: float
    elapsed: float
    method: str
    n: int

    @property
    def ok(self) -> bool:
        return bool(self.residual <= RESIDUAL_TOL)


def as_sparse(M) -> sp.csr_matrix:
    """CSR copy with sorted, summed column indices."""
    M = sp.csr_matrix(M)
    M.sum_duplicates()
    M.sort_indices()
    return M


def matvec(M, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if M.shape[1] != x.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {M.shape} times vector {x.shape}")
    return np.asarray(M @ x).ravel()


def _residual(M, x, b) -> np.ndarray:
    """b - M x accumulated in extended precision (long double where available)."""
    M = sp.csr_matrix(M) if not sp.issparse(M) else M
    if M.shape[1] != np.shape(x)[0]:
        raise ValueError(f"dimension mismatch: matrix {M.shape} times vector {np.shape(x)}")
    xl = np.asarray(x, dtype=np.longdouble)
    return np.asarray(b, dtype=np.longdouble) - np.asarray(M.astype(np.longdouble) @ xl).ravel()


def relative_residual(M, x, b) -> float:
    """||b - M x|| / ||b||, with the product formed in extended precision."""
    r = _residual(M, x, b)
    nr = float(np.sqrt(np.sum(r * r)))
    nb = float(np.linalg.norm(np.asarray(b, dtype=float)))
    return nr / nb if nb > 0 else nr


def _first_zero_pivot(diag):
    zero = np.flatnonzero(diag == 0.0)
    return int(zero[0]) if zero.size else None


def _factor(M, dense_threshold=DENSE_THRESHOLD):
    """LU factorisation with a ``solve`` method, pivot growth and method name."""
    if M.shape[0] < dense_threshold:
        A = M.toarray() if sp.issparse(M) else np.array(M, dtype=float)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu, piv = la.lu_factor(A)
        pivot = _first_zero_pivot(np.diag(lu))
        if pivot is not None:
            raise SingularMatrixError(f"matrix is singular: zero pivot at position {pivot}", pivot=pivot)
        growth = float(np.abs(np.triu(lu)).max() / np.abs(A).max())

        class _Dense:
            def solve(self, r):
                return la.lu_solve((lu, piv), r)
        return _Dense(), growth, "dense-lu"
    M = sp.csc_matrix(M)
    try:
        lu = spla.splu(M, permc_spec="COLAMD", diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        raise SingularMatrixError(f"matrix is singular: {exc}") from None
    pivot = _first_zero_pivot(lu.U.diagonal())
    if pivot is not None:
        raise SingularMatrixError(f"matrix is singular: zero pivot at position {pivot}", pivot=pivot)
    return lu, float(abs(lu.U).max() / abs(M).max()), "superlu"


def solve_direct(M, b, *, tol: float = RESIDUAL_TOL, dense_threshold: int = DENSE_THRESHOLD,
                 check: bool = True, refine: int = 4):
    """Solve M x = b by LU with partial pivoting plus iterative refinement.

    Returns (x, SolveReport). Raises SingularMatrixError on a zero pivot and
    ResidualError if the recomputed relative residual exceeds ``tol``
    (unless ``check`` is False).
    """
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"matrix must be square, got {M.shape}")
    b = np.asarray(b, dtype=float)
    if b.shape != (M.shape[0],):
        raise ValueError(f"rhs has shape {b.shape}, expected ({M.shape[0]},)")
    n = M.shape[0]
    t0 = time.perf_counter()
    lu, growth, method = _factor(M, dense_threshold)
    x, res = _refine(M, b, lu, lu.solve(b), tol, refine)
    elapsed = time.perf_counter() - t0
    report = SolveReport(residual=res, pivot_growth=growth, elapsed=elapsed, method=method, n=n)
    if check and not res <= tol:
        raise ResidualError(f"relative residual {res:.3e} exceeds {tol:.1e}", report=report)
    return x, report


def _refine(M, b, lu, x, tol, steps, project=None):
    """Iterative refinement with extended-precision residuals.

    Stops once the residual is well inside ``tol`` or stops improving.
    ``project`` is applied to every correction.
    """
    if not np.all(np.isfinite(x)):
        return x, float("inf")
    res = relative_residual(M, x, b)
    for _ in range(steps):
        if res <= 0.01 * tol:
            break
        d = lu.solve(np.asarray(_residual(M, x, b), dtype=float))
        y = x + (project(d) if project else d)
        res_y = relative_residual(M, y, b) if np.all(np.isfinite(y)) else float("inf")
        if not res_y < res:
            break
        x, res = y, res_y
    return x, res


# ----------------------------------------------------------------------
# file formats


def write_matrix(path, M) -> Path:
    path = Path(path)
    scipy.io.mmwrite(str(path), sp.coo_matrix(M), precision=17)
    return path


def read_matrix(path) -> sp.csr_matrix:
    return as_sparse(scipy.io.mmread(str(path)))


def write_vector(path, x) -> Path:
    path = Path(path)
    np.savetxt(path, np.asarray(x, dtype=float), fmt="%.17g")
    return path


def read_vector(path) -> np.ndarray:
    return np.atleast_1d(np.loadtxt(path, dtype=float))


# ----------------------------------------------------------------------
# saddle systems with a weakly penalised constant-pressure mode

IDENTITY_TOL = 1e-12


def solve_saddle(system, *, tol: float = RESIDUAL_TOL, refine: int = 6):
    """Solve an assembled hydrostatic Stokes system.

    The constant pressure e = (0, 1) satisfies C e = (0, delta_p Mp 1) and
    e^T C = (0, delta_p (Mp 1)^T) exactly, so int p is fixed by
    delta_p * int p = 1^T F_p alone. That direction carries a weight of
    delta_p only and LU cannot resolve it at delta_p ~ 1e-12: the computed
    solution is exact up to a spurious multiple of e. We factor C once,
    replace the e-component of every correction by its exact value and
    refine until the residual stops improving. The residual gate is
    applied to the original matrix.
    """
    C = system.matrix
    b = system.rhs
    n = C.shape[0]
    ps = system.p_slice
    ones = np.zeros(n)
    ones[ps] = 1.0
    mass = np.zeros(n)
    mass[ps] = np.asarray(system.Mp @ np.ones(system.n)).ravel()
    area = float(mass.sum())

    scale = float(abs(C).max())
    leak = max(float(np.abs(system.B.T @ np.ones(system.n)).max()),
               float(np.abs(system.S @ np.ones(system.n)).max()))
    if leak > IDENTITY_TOL * scale:
        # constant pressure is not a structural mode; nothing to exploit
        return solve_direct(C, b, tol=tol, refine=refine)

    dp = float(system.params.delta_p)
    if dp * area == 0.0:
        raise SingularMatrixError(
            "matrix is singular: constant pressure is a null mode "
            f"(|C e|/|C| = {np.linalg.norm(C @ ones) / (scale * np.sqrt(system.n)):.1e}) "
            "and delta_p = 0 leaves the mean pressure undetermined",
            pivot=ps.stop - 1)
    target = float(b[ps].sum()) / dp

    t0 = time.perf_counter()
    lu, growth, method = _factor(C)

    def with_integral(y, value):
        return y + (value - y @ mass) / area * ones

    x = with_integral(lu.solve(b), target)
    x, res = _refine(C, b, lu, x, tol, refine, project=lambda d: with_integral(d, 0.0))
    elapsed = time.perf_counter() - t0
    report = SolveReport(residual=res, pivot_growth=growth, elapsed=elapsed,
                         method=method + "+mean-deflation", n=n)
    if not res <= tol:
        raise ResidualError(f"relative residual {res:.3e} exceeds {tol:.1e}", report=report)
    return x, report
