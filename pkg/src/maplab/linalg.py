"""Dense-matrix primitives shared by the filtering and synthesis layers.

Everything here operates on plain numpy arrays.  Square roots of
covariances are always *lower* triangular with a nonnegative diagonal,
which pins down the otherwise sign-ambiguous QR/Cholesky factors and
keeps repeated runs bit-identical.
"""

from __future__ import annotations

import numpy as np


class NotSymmetric(ValueError):
    """Input matrix is not symmetric within tolerance."""


class NotPSD(ValueError):
    """Input matrix has an eigenvalue below the PSD tolerance."""


class DimensionMismatch(ValueError):
    """Operand shapes are incompatible with the requested operation."""


def _check_symmetric(m: np.ndarray, tol: float, what: str) -> None:
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise DimensionMismatch(f"{what}: expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    skew = float(np.max(np.abs(m - np.swapaxes(m, -1, -2)))) if m.size else 0.0
    if skew > tol * scale:
        raise NotSymmetric(f"{what}: asymmetry {skew:.3e} exceeds tolerance {tol * scale:.3e}")


def cholesky_sqrt(m: np.ndarray, sym_tol: float = 1e-10, psd_tol: float = 1e-10) -> np.ndarray:
    """Lower-triangular S with S @ S.T == m for symmetric PSD m.

    Positive definite inputs go through the plain Cholesky factorization.
    Semidefinite inputs (eigenvalues in [-psd_tol, 0] are treated as zero)
    fall back to an eigendecomposition followed by re-triangularization so
    the result is still lower triangular with a nonnegative diagonal.
    """
    m = np.asarray(m, dtype=float)
    _check_symmetric(m, sym_tol, "cholesky_sqrt")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    evals, evecs = np.linalg.eigh(0.5 * (m + m.T))
    scale = max(1.0, float(evals[-1]))
    if evals[0] < -psd_tol * scale:
        raise NotPSD(f"cholesky_sqrt: most negative eigenvalue {evals[0]:.3e}")
    root = evecs * np.sqrt(np.clip(evals, 0.0, None))
    return triangularize(root)


def triangularize(a: np.ndarray) -> np.ndarray:
    """Lower-triangular B (k x k) with B @ B.T == A @ A.T, for A of shape (k, m), m >= k.

    Uses the QR factorization of A.T; the diagonal is forced nonnegative so
    the factor is unique.  Leading batch dimensions are allowed and map to
    stacked factorizations.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim < 2:
        raise DimensionMismatch(f"triangularize: expected a matrix, got shape {a.shape}")
    k, m = a.shape[-2], a.shape[-1]
    if m < k:
        raise DimensionMismatch(f"triangularize: need at least as many columns as rows, got {a.shape}")
    r = np.linalg.qr(np.swapaxes(a, -1, -2), mode="r")
    diag = np.diagonal(r, axis1=-2, axis2=-1)
    signs = np.where(diag < 0.0, -1.0, 1.0)
    return np.swapaxes(r, -1, -2) * signs[..., np.newaxis, :]


def max_eigenvalue(m: np.ndarray, sym_tol: float = 1e-8) -> float:
    """Largest eigenvalue of a symmetric matrix."""
    m = np.asarray(m, dtype=float)
    _check_symmetric(m, sym_tol, "max_eigenvalue")
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[-1])


def min_eigenvalue(m: np.ndarray, sym_tol: float = 1e-8) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    m = np.asarray(m, dtype=float)
    _check_symmetric(m, sym_tol, "min_eigenvalue")
    return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])


def is_lower_triangular(s: np.ndarray, tol: float = 0.0) -> bool:
    """True when everything strictly above the diagonal is within tol of zero."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != s.shape[-2]:
        return False
    upper = s * (1.0 - np.tri(s.shape[-2], s.shape[-1]))
    return bool(np.all(np.abs(upper) <= tol))
