"""Dense-matrix primitives: spectral radius, discrete Lyapunov, DARE.

All solvers are pure functions on immutable inputs and are safe to call
concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, NotSchurStable

# Declare "not Schur-stable" when rho(M) >= 1 - this margin; guards the
# infinite-sum semantics of the Lyapunov solution.
STABILITY_MARGIN = 1e-8


def _as_square(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def spectral_radius(M) -> float:
    """Largest eigenvalue magnitude of a square matrix."""
    M = _as_square(M)
    if M.shape[0] == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass(frozen=True)
class LyapunovSolution:
    """Fixed point of X = W + M^T X M (or its transpose twin)."""

    P: np.ndarray
    residual: float
    iterations: int


def solve_discrete_lyapunov(
    M,
    W,
    tol: float = 1e-9,
    transpose: bool = False,
    max_doublings: int = 200,
) -> LyapunovSolution:
    """Solve X = W + M^T X M by doubling the power of M each round.

    With ``transpose=True`` the twin equation X = W + M X M^T is solved
    instead (used for state covariances rather than cost-to-go matrices).
    Requires rho(M) < 1 - STABILITY_MARGIN.
    """
    M = _as_square(M)
    W = _as_square(W)
    if M.shape != W.shape:
        raise ValueError("M and W must have identical shapes")
    rho = spectral_radius(M)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise NotSchurStable(f"spectral radius {rho:.6g} >= {1.0 - STABILITY_MARGIN}")
    A = M.T.copy() if transpose else M.copy()

    X = W.copy()
    it = 0
    for it in range(1, max_doublings + 1):
        inc = A.T @ X @ A
        X = X + inc
        inc_norm = float(np.linalg.norm(inc))
        A = A @ A
        if inc_norm <= 1e-18 * max(1.0, float(np.linalg.norm(X))):
            break
    X = 0.5 * (X + X.T)
    # residual against the original equation, not the doubled matrix
    Meff = M.T if transpose else M
    residual = float(np.linalg.norm(X - W - Meff.T @ X @ Meff))
    if residual > tol:
        raise NoConvergence(
            f"Lyapunov residual {residual:.3g} above tolerance {tol:.3g} "
            f"after {it} doublings"
        )
    return LyapunovSolution(P=X, residual=residual, iterations=it)


def solve_dare(
    A,
    B,
    Q,
    R,
    Sigma_w=None,
    tol: float = 1e-12,
    max_iter: int = 1_000_000,
):
    """Riccati fixed-point iteration from P0 = Q.

    Returns ``(Pstar, Kstar, Jstar)`` where Kstar = -(R + B'PB)^{-1} B'PA
    (so u = Kx closes the loop as A + BK) and Jstar = trace(Pstar Sigma_w),
    or NaN when Sigma_w is not supplied.
    """
    A = _as_square(A)
    B = np.asarray(B, dtype=float)
    Q = _as_square(Q)
    R = _as_square(R)
    if B.ndim != 2 or B.shape[0] != A.shape[0]:
        raise ValueError("B must be n x m")
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        G = R + BtP @ B
        K = -np.linalg.solve(G, BtP @ A)
        P_next = Q + A.T @ P @ (A + B @ K)
        P_next = 0.5 * (P_next + P_next.T)
        if np.linalg.norm(P_next - P) <= tol * max(1.0, float(np.linalg.norm(P_next))):
            P = P_next
            break
        P = P_next
    else:
        raise NoConvergence(f"DARE iteration cap {max_iter} reached")
    BtP = B.T @ P
    Kstar = -np.linalg.solve(R + BtP @ B, BtP @ A)
    if Sigma_w is None:
        Jstar = float("nan")
    else:
        Jstar = float(np.trace(P @ np.asarray(Sigma_w, dtype=float)))
    return P, Kstar, Jstar
