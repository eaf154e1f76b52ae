"""Continuous-time Lyapunov solves and controllability/observability gramians.

The solver is Bartels-Stewart on the real Schur form (scipy's
solve_continuous_lyapunov); every solution is symmetrized and checked against
a relative residual threshold so that a silently bad solve cannot propagate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .model import LtiSystem, require_hurwitz

#: Accept threshold for the relative Lyapunov residual
#: ||A P + P A^T + Q||_F / (2 ||A||_F ||P||_F + ||Q||_F).
LYAP_TOL = 1e-8

#: Relative symmetry / positive-semidefiniteness slack, scaled by ||W||_F.
SYM_TOL_REL = 1e-10
PSD_TOL_REL = 1e-10


class SolverError(RuntimeError):
    """Lyapunov solve failed or did not meet the residual threshold."""


@dataclass(frozen=True)
class GramianPair:
    """Controllability and observability gramians with solve residuals."""

    Wc: np.ndarray
    Wo: np.ndarray
    residual_c: float
    residual_o: float


def lyapunov_residual(A: np.ndarray, Q: np.ndarray, P: np.ndarray) -> float:
    """Relative residual of A P + P A^T + Q = 0."""
    num = np.linalg.norm(A @ P + P @ A.T + Q, "fro")
    den = 2 * np.linalg.norm(A, "fro") * np.linalg.norm(P, "fro") + np.linalg.norm(Q, "fro")
    return float(num / den) if den > 0 else float(num)


def solve_lyapunov(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Solve A P + P A^T + Q = 0 for symmetric Q and Hurwitz A.

    Returns the symmetrized solution.  Raises StabilityError for non-Hurwitz
    A (the equation is then not uniquely solvable) and SolverError when the
    Schur-based solve fails or the relative residual exceeds LYAP_TOL.
    """
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    if Q.shape != A.shape:
        raise ValueError(f"Q must match A, got {Q.shape} vs {A.shape}")
    require_hurwitz(A, "Lyapunov coefficient matrix A")
    if not np.any(Q):
        # A P + P A^T = 0 with Hurwitz A has only the trivial solution.
        return np.zeros_like(A)
    try:
        # scipy solves A X + X A^T = Q_rhs.
        P = scipy.linalg.solve_continuous_lyapunov(A, -Q)
    except Exception as exc:
        raise SolverError(f"Schur-based Lyapunov solve failed: {exc}") from exc
    P = (P + P.T) / 2.0
    res = lyapunov_residual(A, Q, P)
    if not np.isfinite(res) or res > LYAP_TOL:
        raise SolverError(f"Lyapunov residual {res:.3e} exceeds tolerance {LYAP_TOL:.1e}")
    return P


def _check_psd(W: np.ndarray, name: str) -> None:
    scale = max(np.linalg.norm(W, "fro"), 1e-300)
    asym = np.max(np.abs(W - W.T)) if W.size else 0.0
    if asym > SYM_TOL_REL * scale:
        raise SolverError(f"{name} is not symmetric within tolerance ({asym:.3e})")
    lmin = float(np.linalg.eigvalsh(W).min())
    if lmin < -PSD_TOL_REL * scale:
        raise SolverError(f"{name} has eigenvalue {lmin:.3e} below the PSD tolerance")


def gramians(sys: LtiSystem) -> GramianPair:
    """Infinite-horizon gramians of a stable system.

    Wc solves A W + W A^T + B B^T = 0 and Wo solves A^T W + W A + C^T C = 0.
    Near-singular gramians (non-minimal realizations) are accepted here; the
    rank decision belongs to balancing.
    """
    Qc = sys.B @ sys.B.T
    Qo = sys.C.T @ sys.C
    Wc = solve_lyapunov(sys.A, Qc)
    Wo = solve_lyapunov(sys.A.T, Qo)
    _check_psd(Wc, "controllability gramian")
    _check_psd(Wo, "observability gramian")
    return GramianPair(Wc=Wc, Wo=Wo,
                       residual_c=lyapunov_residual(sys.A, Qc, Wc),
                       residual_o=lyapunov_residual(sys.A.T, Qo, Wo))
