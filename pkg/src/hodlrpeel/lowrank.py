"""Low-rank approximation primitives and executable error bounds.

Truncated SVD, a deterministic rank-revealing orth, randomized SVD and the
generalized Nystrom method (both matrix-free), the in-peeling "from sketches"
form, and evaluators for the deterministic projection perturbation bound and
the expected-error bound that certify them.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import linops

EPS = np.finfo(float).eps


class RankError(ValueError):
    """A rank precondition (full-rank top sketch, overdetermined regression,
    parameter ordering) does not hold."""


@dataclass
class LowRankFactors:
    """Rank factorization Q @ X with Q column-orthonormal."""

    Q: np.ndarray
    X: np.ndarray

    @property
    def rank(self) -> int:
        return self.Q.shape[1]

    def dense(self) -> np.ndarray:
        return self.Q @ self.X


def empty_factors(m1: int, m2: int) -> LowRankFactors:
    return LowRankFactors(Q=np.zeros((m1, 0)), X=np.zeros((0, m2)))


def truncated_svd(B, k: int) -> LowRankFactors:
    """Best Frobenius rank-k approximation of B.

    Ties at the cut keep the first k triplets in the order returned by the
    deterministic SVD; the factorization is then implementation-defined but
    the approximation error is not.  Inputs of rank < k come back exact.
    """
    B = np.asarray(B, dtype=float)
    if k < 1:
        raise RankError(f"rank must be >= 1, got {k}")
    if min(B.shape) == 0:
        return empty_factors(B.shape[0], B.shape[1])
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    r = min(k, s.size)
    return LowRankFactors(Q=U[:, :r], X=s[:r, None] * Vt[:r])


def orth(Y) -> np.ndarray:
    """Orthonormal basis for range(Y) via column-pivoted thin QR.

    Columns whose R-diagonal magnitude falls below eps * max(shape) * ||Y||_2
    are dropped.  Each basis column is sign-canonicalized (largest-magnitude
    entry positive) so that nearly identical inputs yield nearly identical
    bases; LAPACK's raw Householder signs flip on exact-zero tests, which
    would make the basis discontinuous in its input.  Pure function of Y;
    the zero matrix yields an empty basis.
    """
    Y = np.asarray(Y, dtype=float)
    m, s = Y.shape
    if s == 0 or not np.any(Y):
        return np.zeros((m, 0))
    Q, R, _ = scipy.linalg.qr(Y, mode="economic", pivoting=True)
    tol = EPS * max(m, s) * np.linalg.norm(Y, 2)
    r = int(np.sum(np.abs(np.diag(R)) > tol))
    Q = Q[:, :r]
    if r:
        lead = np.argmax(np.abs(Q), axis=0)
        signs = np.sign(Q[lead, np.arange(r)])
        signs[signs == 0] = 1.0
        Q = Q * signs
    return Q


def pinv_solve(A, B) -> np.ndarray:
    """Minimum-norm least-squares solution of A x = B (SVD cutoff at
    eps * max(shape) * sigma_max, numpy's default rank-revealing rcond)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[1] == 0:
        return np.zeros((0, B.shape[1]))
    return np.linalg.lstsq(A, B, rcond=None)[0]


def _as_operator(op):
    if isinstance(op, linops.LinearOperator):
        return op
    return linops.make_dense_operator(op)


def rsvd(op, k, s_R, rng) -> LowRankFactors:
    """Randomized SVD: Q = orth(B Omega), then the best rank-k approximation
    of B inside range(Q).  Uses s_R forward and rank(Q) transpose queries."""
    if s_R < k:
        raise RankError(f"sketch width {s_R} below target rank {k}")
    op = _as_operator(op)
    Omega = rng.standard_normal((op.n, s_R))
    Q = orth(op.apply(Omega, linops.FORWARD))
    if Q.shape[1] == 0:
        return empty_factors(op.n, op.n)
    X = op.apply(Q, linops.TRANSPOSE).T  # Q^T B via transpose products
    return truncate_factor(Q, X, k)


def gnm(op, k, s_R, s_L, rng) -> LowRankFactors:
    """Generalized Nystrom: range from a right sketch, then the sketched
    regression argmin_Z ||Psi^T B - Psi^T Q Z||_F solved by pseudoinverse."""
    if not (s_L >= s_R >= k >= 1):
        raise RankError(f"need s_L >= s_R >= k >= 1, got ({k}, {s_R}, {s_L})")
    op = _as_operator(op)
    Omega = rng.standard_normal((op.n, s_R))
    Psi = rng.standard_normal((op.n, s_L))
    Q = orth(op.apply(Omega, linops.FORWARD))
    if Q.shape[1] == 0:
        return empty_factors(op.n, op.n)
    PsiTB = op.apply(Psi, linops.TRANSPOSE).T
    X = pinv_solve(Psi.T @ Q, PsiTB)
    return truncate_factor(Q, X, k)


def gn_from_sketches(Y, Z, psi_t_q, k) -> LowRankFactors:
    """Pure post-processing form used inside peeling: recover Q = orth(Y) and
    return Q [[ (Psi^T Q)^+ Z ]]_k from already-computed (noisy) sketches."""
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    psi_t_q = np.asarray(psi_t_q, dtype=float)
    Q = orth(Y)
    if psi_t_q.shape[1] != Q.shape[1]:
        raise RankError(
            f"left sketch of Q has {psi_t_q.shape[1]} columns, expected {Q.shape[1]}"
        )
    if psi_t_q.shape[0] < psi_t_q.shape[1]:
        raise RankError("underdetermined regression: Psi^T Q has fewer rows than columns")
    if Q.shape[1] == 0:
        return empty_factors(Y.shape[0], Z.shape[1])
    X = pinv_solve(psi_t_q, Z)
    return truncate_factor(Q, X, k)


def truncate_factor(Q, X, k) -> LowRankFactors:
    """[[X]]_k pushed through Q, keeping the orthonormal-factor form."""
    if X.shape[0] <= k:
        return LowRankFactors(Q=Q, X=X)
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    r = min(k, s.size)
    return LowRankFactors(Q=Q @ U[:, :r], X=s[:r, None] * Vt[:r])


@dataclass
class SvdSplit:
    """SVD of B split at rank k, with a sketch projected onto both sides."""

    U_top: np.ndarray
    sigma_top: np.ndarray
    V_top: np.ndarray
    U_bot: np.ndarray
    sigma_bot: np.ndarray
    V_bot: np.ndarray
    omega_top: np.ndarray
    omega_bot: np.ndarray


def split_svd(B, k, Omega) -> SvdSplit:
    B = np.asarray(B, dtype=float)
    Omega = np.asarray(Omega, dtype=float)
    m1, m2 = B.shape
    if not 1 <= k <= min(m1, m2):
        raise RankError(f"split rank {k} out of range for shape {B.shape}")
    U, s, Vt = np.linalg.svd(B, full_matrices=True)
    V = Vt.T
    # sigma has min(m1, m2) entries; the bottom block of the full SVD pads
    # with zeros, which contribute nothing to the norms used below.
    return SvdSplit(
        U_top=U[:, :k],
        sigma_top=s[:k],
        V_top=V[:, :k],
        U_bot=U[:, k:],
        sigma_bot=s[k:],
        V_bot=V[:, k:],
        omega_top=V[:, :k].T @ Omega,
        omega_bot=V[:, k:].T @ Omega,
    )


def rsvd_perturb_bound_rhs(B, Omega, E1, E2, k) -> float:
    """Right-hand side of the deterministic perturbation bound for sketched
    projection: with Q = orth(B Omega + E1) and the approximation
    Q [[Q^T B + E2]]_k,

        ||B - Q [[Q^T B + E2]]_k||_F
            <= ||E1 Omega_top^+||_F + 2 ||E2||_F
               + (||sigma_bot||_F^2 + ||Sigma_bot Omega_bot Omega_top^+||_F^2)^(1/2).

    Requires the top sketch Omega_top = V_top^T Omega to have full rank k.
    """
    split = split_svd(B, k, Omega)
    sv = np.linalg.svd(split.omega_top, compute_uv=False)
    tol = EPS * max(split.omega_top.shape) * (sv[0] if sv.size else 0.0)
    if sv.size < k or sv[-1] <= tol:
        raise RankError("top sketch is rank deficient; bound inapplicable")
    pinv_top = np.linalg.pinv(split.omega_top)
    E1 = np.asarray(E1, dtype=float)
    E2 = np.asarray(E2, dtype=float)
    nb = split.sigma_bot.size
    scaled = split.sigma_bot[:, None] * (split.omega_bot[:nb] @ pinv_top)
    tail = np.sqrt(np.sum(split.sigma_bot**2) + np.sum(scaled**2))
    return float(np.linalg.norm(E1 @ pinv_top) + 2.0 * np.linalg.norm(E2) + tail)


def gn_error_bound(k, s_R, s_L, norm_m2, norm_n2, opt2) -> float:
    """Expected squared-error bound E1 + E2 + 2 sqrt(E1 E2) for the
    generalized Nystrom method run with structured Gaussian matvec noise
    M Omega~ on the range sketch and Psi~^T N on the regression sketch:

        E1 = (1 + k/(s_R - k - 1)) * opt2
        E2 = 18 k/(s_R - k - 1) * ||M||_F^2
             + 8 s_R/(s_L - s_R - 1) * ||N||_F^2
             + 32 s_R/(s_L - s_R - 1) * opt2

    valid for s_R > 2k + 1 and s_L > 2 s_R + 1.
    """
    if not s_R > 2 * k + 1:
        raise RankError(f"need s_R > 2k + 1, got s_R={s_R}, k={k}")
    if not s_L > 2 * s_R + 1:
        raise RankError(f"need s_L > 2 s_R + 1, got s_L={s_L}, s_R={s_R}")
    if min(norm_m2, norm_n2, opt2) < 0:
        raise ValueError("squared norms must be nonnegative")
    a = k / (s_R - k - 1)
    b = s_R / (s_L - s_R - 1)
    e1 = (1.0 + a) * opt2
    e2 = 18.0 * a * norm_m2 + 8.0 * b * norm_n2 + 32.0 * b * opt2
    return float(e1 + e2 + 2.0 * np.sqrt(e1 * e2))


@dataclass(frozen=True)
class NoiseModel:
    """Fixed factors of the structured matvec-noise model: fresh Gaussians
    multiply M on the right-sketch side and N on the left-sketch side."""

    M: np.ndarray
    N: np.ndarray

    def draw(self, rng, s_R, s_L) -> tuple[np.ndarray, np.ndarray]:
        """One realization (E1, F) = (M Omega~, Psi~^T N)."""
        E1 = self.M @ rng.standard_normal((self.M.shape[1], s_R))
        F = rng.standard_normal((self.N.shape[0], s_L)).T @ self.N
        return E1, F
