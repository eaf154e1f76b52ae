"""Balancing transformation, Hankel singular values and truncation.

The balancing matrix follows the square-root procedure: factor Wc = G G^T by
an eigendecomposition (so near-semidefinite gramians degrade gracefully),
diagonalize G^T Wo G = K S^2 K^T, and set H = S^{1/2} K^T G^{-1}.  In the
transformed coordinates both gramians equal diag(sigma).
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from .gramians import gramians
from .model import HyperBox, LtiSystem, ModelError, require_hurwitz

#: Relative eigenvalue cutoff below which the controllability gramian (or the
#: Hankel spectrum) counts as rank deficient and balancing refuses to proceed.
RANK_TOL = 1e-12

#: Relative deviation allowed between the transformed gramians and
#: diag(sigma) before the realization is rejected as inconsistent.
BAL_TOL = 1e-6

#: Condition-number threshold for the H-conditioning warning.  The
#: computation proceeds; the warning is attached to the result.
COND_MAX = 1e8


class RankDeficiencyError(ModelError):
    """The system is too close to non-minimal for a balancing transform."""


class BalancingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BalancedRealization:
    """Balanced coordinates of a stable system.

    ``A_t = H A H^-1``, ``B_t = H B``, ``C_t = C H^-1``; ``sigma`` is the
    nonincreasing Hankel spectrum and equals the diagonal of both transformed
    gramians up to ``bal_defect``.
    """

    system: LtiSystem
    H: np.ndarray
    H_inv: np.ndarray
    sigma: np.ndarray
    A_t: np.ndarray
    B_t: np.ndarray
    C_t: np.ndarray
    cond_H: float
    bal_defect: float

    @property
    def n(self) -> int:
        return self.system.n

    @property
    def ill_conditioned(self) -> bool:
        return self.cond_H > COND_MAX


@dataclass(frozen=True)
class Abstraction:
    """Order-k truncation of a balanced realization plus its initial box.

    ``x0_reduced`` is the componentwise-exact interval hull of
    {S H x0 : x0 in X0}; ``delta`` is attached later by the bounds layer.
    """

    reduced: LtiSystem
    k: int
    S: np.ndarray
    x0_reduced: HyperBox
    parent: BalancedRealization
    delta: np.ndarray | None = None

    def with_delta(self, delta: np.ndarray) -> "Abstraction":
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (self.reduced.p,):
            raise ModelError(f"delta must have shape ({self.reduced.p},), got {delta.shape}")
        if np.any(delta < 0) or not np.all(np.isfinite(delta)):
            raise ModelError("delta entries must be finite and nonnegative")
        return dataclasses.replace(self, delta=delta)


def _psd_sqrt_factor(W: np.ndarray, what: str) -> np.ndarray:
    """Factor W = G G^T via eigendecomposition; fails on rank deficiency."""
    w, V = np.linalg.eigh((W + W.T) / 2.0)
    if w[-1] <= 0 or w[0] <= RANK_TOL * w[-1]:
        raise RankDeficiencyError(
            f"{what} is numerically rank deficient "
            f"(eigenvalue ratio {w[0] / max(w[-1], 1e-300):.3e} <= {RANK_TOL:.1e}); "
            "the realization looks non-minimal -- reduce to a minimal realization first")
    return V * np.sqrt(np.clip(w, 0.0, None))


def hankel_singular_values(sys: LtiSystem) -> np.ndarray:
    """Nonincreasing Hankel spectrum sqrt(eig(Wc Wo)), clamped at zero."""
    g = gramians(sys)
    # eig(Wc Wo) equals eig of the symmetric G^T Wo G with Wc = G G^T; use the
    # symmetric form for stable eigenvalues even when Wc is near singular.
    w, V = np.linalg.eigh((g.Wc + g.Wc.T) / 2.0)
    G = V * np.sqrt(np.clip(w, 0.0, None))
    M = G.T @ g.Wo @ G
    s2 = np.linalg.eigvalsh((M + M.T) / 2.0)
    return np.sqrt(np.clip(s2, 0.0, None))[::-1]


def balance(sys: LtiSystem) -> BalancedRealization:
    """Compute the balancing transformation of a stable system.

    Raises RankDeficiencyError when either gramian is numerically singular
    (non-minimal realization).  An ill-conditioned H (cond > COND_MAX) only
    warns; the condition number is attached to the result.
    """
    require_hurwitz(sys.A)
    g = gramians(sys)
    G = _psd_sqrt_factor(g.Wc, "controllability gramian")
    M = G.T @ g.Wo @ G
    s2, K = np.linalg.eigh((M + M.T) / 2.0)
    s2 = s2[::-1]
    K = K[:, ::-1]
    sigma = np.sqrt(np.clip(s2, 0.0, None))
    if sigma[0] <= 0 or sigma[-1] <= RANK_TOL * sigma[0]:
        raise RankDeficiencyError(
            f"Hankel spectrum is numerically rank deficient "
            f"(sigma_min/sigma_max = {sigma[-1] / max(sigma[0], 1e-300):.3e}); "
            "the realization looks non-minimal -- reduce to a minimal realization first")
    G_inv = np.linalg.inv(G)
    sqrt_sigma = np.sqrt(sigma)
    H = (sqrt_sigma[:, None] * K.T) @ G_inv
    H_inv = (G @ K) / sqrt_sigma[None, :]
    A_t = H @ sys.A @ H_inv
    B_t = H @ sys.B
    C_t = sys.C @ H_inv

    Wct = H @ g.Wc @ H.T
    Wot = H_inv.T @ g.Wo @ H_inv
    D = np.diag(sigma)
    defect = max(np.max(np.abs(Wct - D)), np.max(np.abs(Wot - D))) / sigma[0]
    cond_H = float(np.linalg.cond(H))
    if defect > BAL_TOL:
        raise RankDeficiencyError(
            f"transformed gramians deviate from diag(sigma) by {defect:.3e} relative "
            f"(> {BAL_TOL:.1e}); the balancing transform is numerically unreliable")
    if cond_H > COND_MAX:
        warnings.warn(
            f"balancing matrix is ill conditioned (cond = {cond_H:.3e} > {COND_MAX:.1e}); "
            "downstream bounds remain sound but may be loose", BalancingWarning)
    return BalancedRealization(system=sys, H=H, H_inv=H_inv, sigma=sigma,
                               A_t=A_t, B_t=B_t, C_t=C_t,
                               cond_H=cond_H, bal_defect=float(defect))


def _box_image(L: np.ndarray, box: HyperBox) -> HyperBox:
    """Componentwise-exact interval hull of {L x : x in box}."""
    mid = L @ box.center
    rad = np.abs(L) @ box.halfwidth
    return HyperBox(mid - rad, mid + rad)


def selection_matrix(k: int, n: int) -> np.ndarray:
    """S = [I_k 0], the truncation that keeps the first k balanced states."""
    S = np.zeros((k, n))
    S[:, :k] = np.eye(k)
    return S


def truncate(bal: BalancedRealization, k: int, x0: HyperBox) -> Abstraction:
    """Order-k truncation of a balanced realization.

    Keeps the leading k balanced states; requires p < k <= n so that the
    result qualifies as an output abstraction.
    """
    n, p = bal.n, bal.system.p
    if not (p < k <= n):
        raise ModelError(f"abstraction order must satisfy p < k <= n, got k={k} "
                         f"with p={p}, n={n}")
    if x0.dim != n:
        raise ModelError(f"x0 has dim {x0.dim}, expected n={n}")
    reduced = LtiSystem(bal.A_t[:k, :k], bal.B_t[:k, :], bal.C_t[:, :k])
    return Abstraction(reduced=reduced, k=k, S=selection_matrix(k, n),
                       x0_reduced=_box_image(bal.H[:k, :], x0), parent=bal)


def augmented_initial_box(bal: BalancedRealization, k: int, x0: HyperBox) -> HyperBox:
    """Componentwise-exact interval hull of the lifted initial states
    (H x0, S H x0) in R^(n+k)."""
    if not (1 <= k <= bal.n):
        raise ModelError(f"k must be in [1, n], got {k}")
    L = np.vstack([bal.H, bal.H[:k, :]])
    return _box_image(L, x0)


def sup_augmented_initial_norm(bal: BalancedRealization, k: int, x0: HyperBox) -> float:
    """Sound upper bound on sup ||(H x0, S H x0)||_2 over the box.

    Per coordinate the exact interval over the box is computed (a linear
    functional of a box), then the Euclidean norm of the worst corners is
    taken.  Over-approximates the true supremum; exact when the lifted
    coordinates are independent.
    """
    box = augmented_initial_box(bal, k, x0)
    worst = np.maximum(np.abs(box.lb), np.abs(box.ub))
    return float(np.linalg.norm(worst))
