"""Dense linear-algebra kernels: Khatri-Rao / Hadamard products and spectra.

Everything here operates on plain float64 numpy arrays.  Inputs are
validated for shape and finiteness; all functions are pure.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DimensionMismatchError",
    "ConvergenceError",
    "as_matrix",
    "khatri_rao_rows",
    "khatri_rao_power",
    "hadamard",
    "spectral_norm",
    "min_singular",
    "min_eig_sym",
]

# Entrywise product of d^r columns; refuse anything that would blow memory.
_MAX_KR_COLUMNS = 50_000_000

_SYM_TOL = 1e-10


class DimensionMismatchError(ValueError):
    """Operands have incompatible shapes."""


class ConvergenceError(RuntimeError):
    """Iterative method failed to converge; carries the best estimate."""

    def __init__(self, message: str, best_estimate: float):
        super().__init__(message)
        self.best_estimate = best_estimate


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got ndim={m.ndim}")
    if m.size == 0:
        raise DimensionMismatchError(f"{name} must be nonempty")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def khatri_rao_rows(A, B) -> np.ndarray:
    """Row-wise Khatri-Rao product.

    Row ``i`` of the result is the Kronecker product of row ``i`` of ``A``
    with row ``i`` of ``B``; shape is ``(p, m * n)`` for ``A`` of shape
    ``(p, m)`` and ``B`` of shape ``(p, n)``.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[0] != B.shape[0]:
        raise DimensionMismatchError(
            f"row counts differ: {A.shape[0]} vs {B.shape[0]}"
        )
    p, m = A.shape
    n = B.shape[1]
    return (A[:, :, None] * B[:, None, :]).reshape(p, m * n)


def khatri_rao_power(X, r: int) -> np.ndarray:
    """r-fold row-wise Kronecker power of ``X`` (shape ``(n, d**r)``)."""
    X = as_matrix(X, "X")
    if r < 1:
        raise ValueError(f"power must be >= 1, got {r}")
    d = X.shape[1]
    if d ** r > _MAX_KR_COLUMNS:
        raise ValueError(
            f"d**r = {d}**{r} exceeds the column budget {_MAX_KR_COLUMNS}"
        )
    out = X
    for _ in range(r - 1):
        out = khatri_rao_rows(out, X)
    return out


def hadamard(A, B) -> np.ndarray:
    """Entrywise product of two equal-shape matrices."""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape != B.shape:
        raise DimensionMismatchError(f"shapes differ: {A.shape} vs {B.shape}")
    return A * B


def spectral_norm(M, tol: float = 1e-10) -> float:
    """Largest singular value of ``M`` via power iteration on the small Gram.

    Deterministic: starts from the normalized all-ones vector, with a single
    fixed perturbation retry if the Rayleigh quotient stagnates at zero
    progress (e.g. the start vector is orthogonal to the top eigenvector).
    """
    M = as_matrix(M, "M")
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    # Power-iterate on G = M M^T or M^T M, whichever is smaller.
    if M.shape[0] <= M.shape[1]:
        G = M @ M.T
    else:
        G = M.T @ M
    n = G.shape[0]
    cap = 10 * max(M.shape) + 1000

    def _iterate(v: np.ndarray) -> tuple[float, bool]:
        est = 0.0
        for _ in range(cap):
            w = G @ v
            nw = np.linalg.norm(w)
            if nw == 0.0:
                return 0.0, True  # v in the null space; norm handled by caller
            v = w / nw
            new_est = float(v @ (G @ v))
            if abs(new_est - est) <= tol * max(new_est, 1.0):
                return new_est, True
            est = new_est
        return est, False

    v0 = np.ones(n) / np.sqrt(n)
    est, ok = _iterate(v0)
    if est == 0.0:
        # all-ones start hit the null space exactly; fixed perturbation retry
        v0 = np.ones(n)
        v0[::2] *= 2.0
        v0 /= np.linalg.norm(v0)
        est, ok = _iterate(v0)
    if not ok:
        raise ConvergenceError(
            f"power iteration did not converge within {cap} iterations",
            best_estimate=float(np.sqrt(max(est, 0.0))),
        )
    return float(np.sqrt(max(est, 0.0)))


def min_singular(M) -> float:
    """Smallest singular value of ``M`` via eigendecomposition of the Gram.

    For a wide matrix (cols > rows) this is the smallest singular value of
    the linear map, i.e. sigma_min of the full SVD restricted to
    min(rows, cols) values.
    """
    M = as_matrix(M, "M")
    if M.shape[0] <= M.shape[1]:
        G = M @ M.T
    else:
        G = M.T @ M
    eigs = np.linalg.eigvalsh(G)
    return float(np.sqrt(max(eigs[0], 0.0)))


def min_eig_sym(S) -> float:
    """Smallest eigenvalue of a symmetric matrix.

    Rejects matrices that are asymmetric beyond 1e-10 entrywise, then
    operates on the exact symmetrization (S + S^T) / 2.
    """
    S = as_matrix(S, "S")
    if S.shape[0] != S.shape[1]:
        raise DimensionMismatchError(f"matrix must be square, got {S.shape}")
    if np.max(np.abs(S - S.T)) > _SYM_TOL:
        raise ValueError("matrix is asymmetric beyond tolerance 1e-10")
    sym = (S + S.T) / 2.0
    return float(np.linalg.eigvalsh(sym)[0])
