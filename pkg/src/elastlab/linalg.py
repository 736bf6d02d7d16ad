"""Small dense symmetric linear algebra.

Every matrix the flows need (ridge-plus-Gram matrices, second-moment matrices)
is symmetric, so exponentials and solves go through an eigendecomposition or a
Cholesky factorization rather than general-purpose routines.
"""
import numpy as np
from scipy import linalg as sla

from .errors import ParameterError, ShapeError, SingularityError

SYM_RTOL = 1e-10
PD_THRESHOLD = 1e-12


def as_vector(v, name="vector"):
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} has non-finite entries")
    return arr


def as_matrix(a, name="matrix"):
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} has non-finite entries")
    return arr


def symmetrize(a, name="matrix"):
    """Validate near-symmetry of a square matrix and return ``(a + a.T) / 2``."""
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"{name} must be square, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > SYM_RTOL * scale:
        raise ShapeError(f"{name} is not symmetric within relative tolerance {SYM_RTOL:g}")
    return 0.5 * (a + a.T)


def sym_eig(a):
    """Eigendecomposition of a symmetric matrix.

    Returns
    -------
    eigenvalues : ndarray
        Ascending.
    eigenvectors : ndarray
        Orthogonal matrix whose columns are the eigenvectors.
    """
    return np.linalg.eigh(symmetrize(a))


def sym_expm_neg(a, t):
    """``exp(-a t)`` for symmetric ``a`` and ``t >= 0``."""
    a = symmetrize(a)
    t = float(t)
    if not t >= 0.0:
        raise ParameterError(f"time must be nonnegative, got {t}")
    if t == 0.0:
        return np.eye(a.shape[0])
    lam, q = np.linalg.eigh(a)
    out = (q * np.exp(-lam * t)) @ q.T
    return 0.5 * (out + out.T)


def min_eigenvalue(a):
    a = symmetrize(a)
    return float(np.linalg.eigvalsh(a)[0]) if a.size else np.inf


def is_pd(a):
    return min_eigenvalue(a) > PD_THRESHOLD


def solve_spd(a, b):
    """Solve ``a x = b`` for symmetric positive definite ``a``.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    Raises :class:`SingularityError` carrying the minimum eigenvalue when ``a``
    is not positive definite.
    """
    a = symmetrize(a)
    lam_min = min_eigenvalue(a)
    if not lam_min > PD_THRESHOLD:
        raise SingularityError(
            f"matrix is not positive definite: minimum eigenvalue {lam_min:.6g}",
            min_eigenvalue=lam_min,
        )
    b = np.asarray(b, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise ShapeError(f"right-hand side has {b.shape[0]} rows, matrix has {a.shape[0]}")
    return sla.cho_solve(sla.cho_factor(a, lower=True), b)
