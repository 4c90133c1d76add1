"""Matrix-analysis kernel shared by every condition check.

Ranks, null spaces, subspace intersections, invariant subspaces and the
chi-square quantile. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.special

__all__ = [
    "ToleranceProfile",
    "DEFAULT_TOL",
    "SubspaceBasis",
    "numeric_rank",
    "null_space_basis",
    "orth_basis",
    "range_intersection_nontrivial",
    "intersection_basis",
    "largest_invariant_subspace",
    "spectral_radius",
    "is_unstable",
    "regularized_gamma_p",
    "chi_square_cdf",
    "chi_square_quantile",
]

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class ToleranceProfile:
    """Numerical tolerances used by rank decisions and fixpoint solvers."""

    rank_tol_factor: float = 1.0
    fixpoint_tol: float = 1e-10
    fixpoint_max_iters: int = 100_000
    # absolute cutoff on sines of principal angles between computed bases
    subspace_tol: float = 1e-9

    def __post_init__(self):
        if not (self.rank_tol_factor > 0 and self.fixpoint_tol > 0 and self.subspace_tol > 0):
            raise ValueError("tolerances must be strictly positive")
        if self.fixpoint_max_iters < 1:
            raise ValueError("fixpoint_max_iters must be >= 1")

    def cutoff(self, shape, smax):
        return self.rank_tol_factor * _EPS * max(shape) * smax

    def as_dict(self):
        return {
            "rank_tol_factor": self.rank_tol_factor,
            "fixpoint_tol": self.fixpoint_tol,
            "fixpoint_max_iters": self.fixpoint_max_iters,
            "subspace_tol": self.subspace_tol,
        }


DEFAULT_TOL = ToleranceProfile()


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis (as columns) of a subspace of R^n.

    ``basis`` always has shape ``(n, k)``; ``k == 0`` is the zero subspace.
    """

    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2:
            raise ValueError("basis must be 2-D")
        if b.shape[1] > b.shape[0]:
            raise ValueError("more basis vectors than ambient dimension")
        object.__setattr__(self, "basis", b)

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.dim == 0

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    @classmethod
    def empty(cls, n: int) -> "SubspaceBasis":
        return cls(np.zeros((n, 0)))

    @classmethod
    def full(cls, n: int) -> "SubspaceBasis":
        return cls(np.eye(n))

    @classmethod
    def span(cls, vectors, tol: ToleranceProfile = DEFAULT_TOL) -> "SubspaceBasis":
        """Orthonormal basis of the column span of ``vectors``."""
        return orth_basis(np.atleast_2d(np.asarray(vectors, dtype=float)), tol)


def _svd(M):
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return M, np.zeros(0), np.zeros((M.shape[1], M.shape[1]))
    U, s, Vt = np.linalg.svd(M, full_matrices=True)
    return U, s, Vt


def numeric_rank(M, tol: ToleranceProfile = DEFAULT_TOL) -> int:
    """Number of singular values above the tolerance-scaled cutoff."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > tol.cutoff(M.shape, s[0])))


def null_space_basis(M, tol: ToleranceProfile = DEFAULT_TOL) -> SubspaceBasis:
    """Orthonormal basis of ``{x : M x = 0}``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[1]
    if M.shape[0] == 0:
        return SubspaceBasis.full(n)
    _, s, Vt = _svd(M)
    r = numeric_rank(M, tol)
    return SubspaceBasis(Vt[r:].T.copy())


def orth_basis(M, tol: ToleranceProfile = DEFAULT_TOL) -> SubspaceBasis:
    """Orthonormal basis of ``range(M)``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0]
    if M.shape[1] == 0:
        return SubspaceBasis.empty(n)
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    r = numeric_rank(M, tol)
    return SubspaceBasis(U[:, :r].copy())


def _as_basis(U) -> np.ndarray:
    return U.basis if isinstance(U, SubspaceBasis) else np.atleast_2d(np.asarray(U, dtype=float))


def _residual_null(R, cutoff):
    """Right singular vectors of ``R`` whose singular value is <= cutoff."""
    if R.shape[1] == 0:
        return np.zeros((0, 0))
    _, s, Vt = np.linalg.svd(R, full_matrices=True)
    s_full = np.zeros(Vt.shape[0])
    s_full[: s.size] = s
    return Vt[s_full <= cutoff].T


def range_intersection_nontrivial(U, V, tol: ToleranceProfile = DEFAULT_TOL) -> bool:
    """True iff ``range(U) ∩ range(V) != {0}``.

    Equivalent to ``rank([U V]) < rank(U) + rank(V)``; evaluated on
    orthonormalised inputs so that the cutoff is an angle (``subspace_tol``).
    """
    Ub, Vb = _as_basis(U), _as_basis(V)
    if Ub.shape[0] != Vb.shape[0]:
        raise ValueError("ambient dimensions differ")
    return intersection_basis(Ub, Vb, tol).dim > 0


def intersection_basis(U, V, tol: ToleranceProfile = DEFAULT_TOL) -> SubspaceBasis:
    """Orthonormal basis of ``range(U) ∩ range(V)``."""
    Ub, Vb = orth_basis(_as_basis(U), tol).basis, orth_basis(_as_basis(V), tol).basis
    n = Ub.shape[0]
    if Ub.shape[1] == 0 or Vb.shape[1] == 0:
        return SubspaceBasis.empty(n)
    # directions of V whose distance to range(U) is below the angle cutoff
    R = Vb - Ub @ (Ub.T @ Vb)
    K = _residual_null(R, tol.subspace_tol)
    if K.shape[1] == 0:
        return SubspaceBasis.empty(n)
    return orth_basis(Vb @ K, tol)


def largest_invariant_subspace(A, V0, tol: ToleranceProfile = DEFAULT_TOL) -> SubspaceBasis:
    """Largest ``A``-invariant subspace contained in ``V0``.

    Iterates ``V_{j+1} = {v in V_j : A v in V_j}`` until the dimension
    stops dropping (at most ``n`` rounds).
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("A must be square")
    B = orth_basis(_as_basis(V0), tol).basis
    if B.shape[0] != n:
        raise ValueError("V0 ambient dimension does not match A")
    cutoff = tol.subspace_tol * max(np.linalg.norm(A, 2), 1.0)
    for _ in range(n + 1):
        if B.shape[1] == 0:
            return SubspaceBasis.empty(n)
        AB = A @ B
        C = _residual_null(AB - B @ (B.T @ AB), cutoff)
        if C.shape[1] == B.shape[1]:
            return SubspaceBasis(B)
        B = orth_basis(B @ C, tol).basis
    return SubspaceBasis(B)


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    try:
        w = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - LAPACK failure
        raise ArithmeticError(f"eigenvalue solver failed: {exc}") from exc
    return float(np.max(np.abs(w))) if w.size else 0.0


def is_unstable(A) -> bool:
    """Strict ``rho(A) > 1``; the boundary counts as stable."""
    return spectral_radius(A) > 1.0


# -- chi-square quantile -------------------------------------------------

def regularized_gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma ``P(a, x)``."""
    if a <= 0:
        raise ValueError("a must be positive")
    if x < 0:
        raise ValueError("x must be non-negative")
    return float(scipy.special.gammainc(a, x))


def chi_square_cdf(x: float, df: float) -> float:
    if x <= 0:
        return 0.0
    return regularized_gamma_p(df / 2.0, x / 2.0)


def chi_square_quantile(df: int, confidence: float) -> float:
    """Threshold ``t`` with ``P(chi2_df <= t) = confidence``."""
    if not (isinstance(df, (int, np.integer)) and df >= 1):
        raise ValueError(f"df must be a positive integer, got {df!r}")
    if not (0.0 < confidence < 1.0):
        raise ValueError(f"confidence must lie in (0, 1), got {confidence!r}")
    return float(2.0 * scipy.special.gammaincinv(df / 2.0, confidence))
