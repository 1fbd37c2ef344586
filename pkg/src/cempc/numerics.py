"""Small dense linear-algebra kernel.

Everything here works on plain ``numpy`` arrays. Matrices are validated on
entry (2-D, finite) and never mutated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InstabilityError, InvalidInputError, NotStabilizableError


@dataclass(frozen=True)
class NumericsSettings:
    symmetry_tol: float = 1e-12
    dlyap_residual_tol: float = 1e-9
    dare_step_tol: float = 1e-11
    dare_max_iter: int = 100_000


DEFAULT_SETTINGS = NumericsSettings()


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float array (vectors are not promoted)."""
    arr = np.asarray(M, dtype=float)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite entries")
    return arr


def _require_square(M: np.ndarray, name: str) -> None:
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {M.shape}")


def spectral_norm(M) -> float:
    """Largest singular value of ``M``."""
    M = as_matrix(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def spectral_radius(M) -> float:
    M = as_matrix(M)
    _require_square(M, "matrix")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def sym_eig_extremes(M, settings: NumericsSettings = DEFAULT_SETTINGS) -> tuple[float, float, float]:
    """Return ``(sigma_min, sigma_max, sigma_max / sigma_min)`` of a symmetric positive definite matrix."""
    M = as_matrix(M)
    _require_square(M, "matrix")
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > settings.symmetry_tol * scale:
        raise DomainError("matrix is not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (M + M.T))
    lo, hi = float(eig[0]), float(eig[-1])
    if lo <= 0.0:
        raise DomainError(f"matrix is not positive definite (smallest eigenvalue {lo:.3e})")
    return lo, hi, hi / lo


def solve_dlyap(A_cl, settings: NumericsSettings = DEFAULT_SETTINGS) -> np.ndarray:
    """Solve ``P - A_cl^T P A_cl = I`` for a Schur-stable ``A_cl``.

    The equation is vectorised with Kronecker products and solved directly,
    which is fine for the state dimensions handled here (n <= ~10).
    """
    A = as_matrix(A_cl, "A_cl")
    _require_square(A, "A_cl")
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise InstabilityError(f"spectral radius {rho:.6g} >= 1")
    n = A.shape[0]
    # vec(A^T P A) = (A^T kron A^T) vec(P) for column-major vec
    lhs = np.eye(n * n) - np.kron(A.T, A.T)
    vec_p = np.linalg.solve(lhs, np.eye(n).reshape(-1, order="F"))
    P = vec_p.reshape(n, n, order="F")
    P = 0.5 * (P + P.T)
    residual = np.linalg.norm(P - A.T @ P @ A - np.eye(n), "fro")
    if residual > settings.dlyap_residual_tol * max(1.0, np.linalg.norm(P, "fro")):
        raise InstabilityError(f"Lyapunov residual {residual:.3e} too large; A_cl is close to marginal")
    return P


def lqr_gain(A, B, R, P) -> np.ndarray:
    """``K = -(R + B^T P B)^{-1} B^T P A`` so that ``u = K x``."""
    return -np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def solve_dare(A, B, Q, R, settings: NumericsSettings = DEFAULT_SETTINGS) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing DARE solution by fixed-point iteration of the Riccati recursion.

    Returns ``(P, K)`` with the gain convention ``u = K x``.
    """
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    Q = as_matrix(Q, "Q")
    R = as_matrix(R, "R")
    _require_square(A, "A")
    n, m = B.shape
    if A.shape[0] != n or Q.shape != (n, n) or R.shape != (m, m):
        raise InvalidInputError("inconsistent dimensions for (A, B, Q, R)")
    sym_eig_extremes(Q, settings)
    sym_eig_extremes(R, settings)

    P = Q.copy()
    for _ in range(settings.dare_max_iter):
        BtP = B.T @ P
        P_next = Q + A.T @ P @ A - A.T @ P @ B @ np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise NotStabilizableError("Riccati recursion diverged")
        step = np.linalg.norm(P_next - P, "fro")
        P = P_next
        if step <= settings.dare_step_tol * max(1.0, np.linalg.norm(P, "fro")):
            break
    else:
        raise NotStabilizableError(
            f"Riccati recursion did not converge in {settings.dare_max_iter} iterations"
        )
    K = lqr_gain(A, B, R, P)
    if spectral_radius(A + B @ K) >= 1.0:
        raise NotStabilizableError("converged Riccati solution is not stabilizing")
    return P, K


def is_stabilizable(A, B) -> bool:
    """Pragmatic stabilizability test: does the Riccati recursion with ``Q = I, R = I`` converge?"""
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    try:
        solve_dare(A, B, np.eye(A.shape[0]), np.eye(B.shape[1]))
    except NotStabilizableError:
        return False
    return True


def weighted_sq_norm(x: np.ndarray, M: np.ndarray) -> float:
    """``x^T M x``."""
    return float(x @ M @ x)
