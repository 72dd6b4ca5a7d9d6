"""Semidefinite feasibility/minimization backend.

Contract: affine symmetric-matrix constraints over a flat vector of
unknowns, plus nonnegative scalar rows, with a linear (optionally
diagonal-quadratic) objective.  `ConeProgram` collects the blocks in the
solver's native geometry

    minimize  1/2 x' P x + q' x   s.t.   A x + s = b,  s in K,

with PSD blocks in scaled-triangle (svec) form, and drives the Clarabel
interior-point solver directly.  Building the matrices ourselves (the
synthesis layer probes its affine LMI maps once per grid point) keeps
repeated solves cheap compared to a modeling-layer round trip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

import clarabel

_SQRT2 = np.sqrt(2.0)


def svec(m: np.ndarray) -> np.ndarray:
    """Scaled upper-triangle vectorization, column-stacked.

    svec(M) . svec(N) = trace(M N) for symmetric M, N; the off-diagonal
    entries carry sqrt(2).
    """
    m = np.asarray(m, dtype=float)
    d = m.shape[0]
    out = np.empty(d * (d + 1) // 2)
    k = 0
    for j in range(d):
        for i in range(j + 1):
            out[k] = m[i, j] * (_SQRT2 if i != j else 1.0)
            k += 1
    return out


def svec_rows(d: int) -> int:
    return d * (d + 1) // 2


def smat(v: np.ndarray, d: int) -> np.ndarray:
    """Inverse of svec."""
    out = np.zeros((d, d))
    k = 0
    for j in range(d):
        for i in range(j + 1):
            val = v[k] / (_SQRT2 if i != j else 1.0)
            out[i, j] = val
            out[j, i] = val
            k += 1
    return out


@dataclass
class SdpResult:
    status: str
    x: np.ndarray | None
    objective: float | None
    iterations: int
    solve_seconds: float

    @property
    def ok(self) -> bool:
        return self.status in ("Solved", "AlmostSolved")

    @property
    def infeasible(self) -> bool:
        return self.status in ("PrimalInfeasible", "AlmostPrimalInfeasible")


class ConeProgram:
    """Incrementally assembled cone program over n_vars unknowns."""

    def __init__(self, n_vars: int):
        self.n_vars = n_vars
        self._a_blocks: list = []
        self._b_blocks: list[np.ndarray] = []
        self._cones: list = []

    def add_psd(self, a_block, b_block: np.ndarray, dim: int) -> None:
        """Constrain smat(b - A x) to be positive semidefinite."""
        if a_block.shape != (svec_rows(dim), self.n_vars):
            raise ValueError(f"PSD block shape {a_block.shape} does not match dim {dim}")
        self._a_blocks.append(sparse.csr_matrix(a_block))
        self._b_blocks.append(np.asarray(b_block, dtype=float))
        self._cones.append(clarabel.PSDTriangleConeT(dim))

    def add_nonneg(self, a_rows, b_rows: np.ndarray) -> None:
        """Constrain b - A x >= 0 elementwise."""
        a_rows = sparse.csr_matrix(a_rows)
        if a_rows.shape[1] != self.n_vars:
            raise ValueError("nonnegative rows have wrong width")
        self._a_blocks.append(a_rows)
        self._b_blocks.append(np.asarray(b_rows, dtype=float))
        self._cones.append(clarabel.NonnegativeConeT(a_rows.shape[0]))

    def add_zero(self, a_rows, b_rows: np.ndarray) -> None:
        """Constrain b - A x == 0."""
        a_rows = sparse.csr_matrix(a_rows)
        self._a_blocks.append(a_rows)
        self._b_blocks.append(np.asarray(b_rows, dtype=float))
        self._cones.append(clarabel.ZeroConeT(a_rows.shape[0]))

    def solve(self, q: np.ndarray, p_diag: np.ndarray | None = None,
              tol_gap_rel: float = 1e-3, tol_gap_abs: float = 1e-9,
              tol_feas: float = 1e-8, max_iter: int = 200,
              verbose: bool = False) -> SdpResult:
        a = sparse.vstack(self._a_blocks, format="csc")
        b = np.concatenate(self._b_blocks)
        if p_diag is None:
            p = sparse.csc_matrix((self.n_vars, self.n_vars))
        else:
            p = sparse.diags(np.asarray(p_diag, dtype=float), format="csc")
        settings = clarabel.DefaultSettings()
        settings.verbose = verbose
        settings.tol_gap_rel = tol_gap_rel
        settings.tol_gap_abs = tol_gap_abs
        settings.tol_feas = tol_feas
        settings.max_iter = max_iter
        # graceful stall handling: a stalled-but-converged iterate reports
        # AlmostSolved under these relaxed thresholds instead of an error
        settings.reduced_tol_gap_rel = 10.0 * tol_gap_rel
        settings.reduced_tol_gap_abs = 100.0 * tol_gap_abs
        settings.reduced_tol_feas = 10.0 * tol_feas
        solver = clarabel.DefaultSolver(p, np.asarray(q, dtype=float), a, b, self._cones, settings)
        sol = solver.solve()
        status = str(sol.status)
        # stalled runs (NumericalError / InsufficientProgress) still carry the
        # last iterate; callers that verify numerically downstream may use it
        x = None
        if status in ("Solved", "AlmostSolved", "NumericalError", "InsufficientProgress", "MaxIterations"):
            x = np.asarray(sol.x)
        return SdpResult(status=status, x=x, objective=float(sol.obj_val),
                         iterations=int(sol.iterations), solve_seconds=float(sol.solve_time))
