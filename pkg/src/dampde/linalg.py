"""Symmetric positive definite solvers.

``pcg_solve`` is a Jacobi-preconditioned conjugate gradient iteration on CSR
matrices; ``dense_solve`` is a pivoted LU used as a brute-force oracle in
tests. ``SpdOperator`` wraps one assembled matrix with a cached solver, either
a sparse LU factorization or PCG.
"""

from __future__ import annotations

import logging
import threading
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    def __init__(self, iters, residual, message=None):
        self.iters = iters
        self.residual = residual
        super().__init__(message or f"no convergence after {iters} iterations (residual {residual:.3e})")


class SingularMatrix(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-14
    max_iter: int | None = None  # None -> 10*sqrt(dofs) + 100
    preconditioner: str = "jacobi"  # or "none"

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("solver tolerances must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.preconditioner not in ("jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    def iteration_cap(self, ndofs):
        if self.max_iter is not None:
            return self.max_iter
        return int(10 * np.sqrt(ndofs)) + 100


DEFAULT_SOLVER = SolverConfig()


def pcg_solve(A, b, cfg: SolverConfig | None = None, x0=None):
    """Solve ``A x = b`` for SPD ``A``.

    Returns ``(x, iters, residual)`` where ``residual`` is the Euclidean norm
    of the final recursive residual. Stops when that norm drops below
    ``max(rel_tol * ||b||, abs_tol)``.
    """
    cfg = cfg or DEFAULT_SOLVER
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if A.shape != (n, n):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    bnorm = np.linalg.norm(b)
    target = max(cfg.rel_tol * bnorm, cfg.abs_tol)
    if x0 is None:
        x = np.zeros(n)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float)
        r = b - A @ x
    rnorm = np.linalg.norm(r)
    if rnorm <= target:
        return x, 0, rnorm
    if cfg.preconditioner == "jacobi":
        inv_diag = 1.0 / A.diagonal()
    else:
        inv_diag = np.ones(n)
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    cap = cfg.iteration_cap(n)
    for k in range(1, cap + 1):
        Ap = A @ p
        step = rz / (p @ Ap)
        x += step * p
        r -= step * Ap
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            return x, k, rnorm
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergence(cap, rnorm)


def dense_solve(A, b, max_dim=2000):
    """Pivoted dense LU solve; raises ``SingularMatrix`` on a tiny pivot."""
    A = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("dense_solve needs a square matrix")
    if A.shape[0] > max_dim:
        raise ValueError(f"dense_solve guard: dimension {A.shape[0]} > {max_dim}")
    if A.shape[0] != b.shape[0]:
        raise ValueError("dimension mismatch")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)  # the pivot test below decides
        lu, piv = sla.lu_factor(A, check_finite=True)
    scale = np.linalg.norm(A, ord=np.inf)
    if A.shape[0] and np.min(np.abs(np.diag(lu))) < 1e-14 * scale:
        raise SingularMatrix("pivot below 1e-14 * ||A||")
    return sla.lu_solve((lu, piv), b)


class SpdOperator:
    """An SPD matrix with a reusable solve.

    ``method="lu"`` factors once with SuperLU and back-substitutes on each
    call; ``method="pcg"`` runs ``pcg_solve`` warm-started from ``x0``.
    """

    def __init__(self, A, method="lu", cfg: SolverConfig | None = None):
        self.A = sp.csr_matrix(A)
        self.method = method
        self.cfg = cfg or DEFAULT_SOLVER
        self.iterations = 0
        self._lock = threading.Lock()  # SuperLU handles are not re-entrant
        if method == "lu":
            n = self.A.shape[0]
            self._lu = spla.splu(sp.csc_matrix(self.A), permc_spec="MMD_AT_PLUS_A") if n else None
        elif method != "pcg":
            raise ValueError(f"unknown solver method {method!r}")

    def solve(self, b, x0=None):
        b = np.asarray(b, dtype=float)
        if b.size == 0:
            return b.copy()
        if self.method == "lu":
            with self._lock:
                return self._lu.solve(b)
        x, it, _ = pcg_solve(self.A, b, self.cfg, x0)
        with self._lock:
            self.iterations += it
        return x
