"""Dense linear-algebra kernels for small real matrices.

Symmetric eigendecomposition, PSD projection, spectral radius, and the two
discrete-time equation solvers (Lyapunov via Smith doubling, Riccati via
fixed-point recursion). Everything operates on plain float64 ndarrays;
symmetric matrices are ordinary arrays kept symmetric by construction.
"""

from __future__ import annotations

import numpy as np

from .errors import SolverError, ValidationError

# Iterate P <- P + A'PA, A <- A^2; magnitude cap flags divergence (rho >= 1).
DLYAP_CAP_FACTOR = 1e12
DLYAP_MAX_DOUBLINGS = 200
DARE_MAX_ITER = 100_000


def symmetrize(M):
    """Return (M + M.T)/2."""
    M = np.asarray(M, dtype=float)
    return 0.5 * (M + M.T)


def check_finite(M, name="matrix"):
    """Reject NaN/Inf before they enter any kernel."""
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{name} contains non-finite entries")
    return M


def sym_eig(S, name="matrix"):
    """Eigendecomposition of a symmetric matrix.

    Returns (eigenvalues ascending, orthonormal eigenvectors V) with
    S = V @ diag(w) @ V.T.
    """
    S = check_finite(S, name)
    try:
        w, V = np.linalg.eigh(symmetrize(S))
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"symmetric eigensolver failed on {name}: {exc}") from exc
    return w, V


def psd_project(S, floor=0.0, name="matrix"):
    """Frobenius-nearest symmetric matrix with min eigenvalue >= floor."""
    if floor < 0:
        raise ValidationError("psd_project floor must be nonnegative")
    w, V = sym_eig(S, name)
    if w[0] >= floor:
        return symmetrize(S)
    w = np.maximum(w, floor)
    return symmetrize((V * w) @ V.T)


def spectral_radius(A):
    """Max |eigenvalue| of a square matrix."""
    A = check_finite(A, "A")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError("spectral_radius needs a square matrix")
    try:
        ev = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(np.abs(ev)))


def dlyap(A, Qc):
    """Solve A'PA - P + Qc = 0 by Smith doubling.

    Returns the PSD solution P, or None when the iterates blow past the
    magnitude cap, which certifies rho(A) >= 1. The divergence flag is
    informative output, not an error: this is the stability oracle.
    """
    A = check_finite(A, "A")
    Qc = symmetrize(check_finite(Qc, "Qc"))
    if A.shape[0] != A.shape[1] or A.shape != Qc.shape:
        raise ValidationError("dlyap dimension mismatch")
    cap = DLYAP_CAP_FACTOR * max(np.linalg.norm(Qc), 1e-300)
    P = Qc.copy()
    Ak = A.copy()
    for _ in range(DLYAP_MAX_DOUBLINGS):
        P_next = P + Ak.T @ P @ Ak
        if not np.all(np.isfinite(P_next)) or np.linalg.norm(P_next) > cap:
            return None
        if np.linalg.norm(P_next - P) <= 1e-14 * max(np.linalg.norm(P), 1.0):
            return symmetrize(P_next)
        P = P_next
        Ak = Ak @ Ak
        if not np.all(np.isfinite(Ak)):
            return None
    return None


def dare(A, B, Qc, Rc, tol=1e-10, max_iter=DARE_MAX_ITER):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Fixed-point recursion from P0 = Qc; returns (P, K) with
    K = -(Rc + B'PB)^{-1} B'PA and rho(A + BK) < 1. The caller is
    responsible for stabilizability of (A, B).
    """
    A = check_finite(A, "A")
    B = check_finite(B, "B")
    Qc = symmetrize(check_finite(Qc, "Qc"))
    Rc = symmetrize(check_finite(Rc, "Rc"))
    n = A.shape[0]
    if B.shape[0] != n or Qc.shape != (n, n) or Rc.shape != (B.shape[1],) * 2:
        raise ValidationError("dare dimension mismatch")
    P = Qc.copy()
    for _ in range(max_iter):
        G = Rc + B.T @ P @ B
        try:
            gain = np.linalg.solve(G, B.T @ P @ A)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("dare innovation Rc + B'PB not positive "
                                  "definite") from exc
        if np.linalg.eigvalsh(symmetrize(G))[0] <= 0:
            raise ValidationError("dare innovation Rc + B'PB not positive definite")
        P_next = symmetrize(A.T @ P @ A - A.T @ P @ B @ gain + Qc)
        delta = np.linalg.norm(P_next - P)
        P = P_next
        if delta <= tol * max(np.linalg.norm(P), 1.0):
            K = -np.linalg.solve(Rc + B.T @ P @ B, B.T @ P @ A)
            return P, K
    raise SolverError(f"dare recursion did not converge in {max_iter} iterations")
