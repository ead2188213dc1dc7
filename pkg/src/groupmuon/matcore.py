"""Dense linear-algebra substrate.

All operations work on plain 2-D float64 numpy arrays. The key primitives are
the compact SVD, the exact polar factor P(X) = U V^T (the idealized whitening
direction), the nuclear norm, a numerical-rank surrogate with a declared
tolerance policy, and the Newton-Schulz polynomial iteration used as the
practical approximate whitening operator.

Useful identities, all exercised by the test suite:

    <X, P(X)>     = ||X||_*          (nuclear norm)
    ||P(X)||_F^2  = rank(X)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalFailureError

__all__ = [
    "SvdResult",
    "RankPolicy",
    "NewtonSchulzConfig",
    "MACHINE_RANK_POLICY",
    "FIXED_RELATIVE_RANK_POLICY",
    "CONVERGENT_NS_CONFIG",
    "as_matrix",
    "compact_svd",
    "exact_polar",
    "nuclear_norm",
    "numerical_rank",
    "newton_schulz",
    "frobenius_inner",
]


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and coerce input to a finite 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.size == 0:
        raise InvalidInputError(f"{name} must be non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SvdResult:
    """Compact SVD a = u @ diag(sigma) @ v.T with k = min(rows, cols).

    u is (rows, k), sigma is (k,) nonincreasing and nonnegative, v is (cols, k).
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class RankPolicy:
    """Tolerance policy deciding which singular values count toward the rank.

    kind "machine" uses max(rows, cols) * eps * sigma_max, the usual LAPACK-style
    default. kind "relative" uses rel_tol * sigma_max with a fixed relative
    cutoff, which is the policy used by the rank-ratio profiler.
    """

    kind: str = "machine"
    rel_tol: float = 1e-10

    def __post_init__(self):
        if self.kind not in ("machine", "relative"):
            raise InvalidInputError(f"unknown rank policy kind {self.kind!r}")
        if self.rel_tol <= 0:
            raise InvalidInputError("rel_tol must be positive")

    def threshold(self, rows: int, cols: int, sigma_max: float) -> float:
        if self.kind == "machine":
            return max(rows, cols) * np.finfo(np.float64).eps * sigma_max
        return self.rel_tol * sigma_max


MACHINE_RANK_POLICY = RankPolicy("machine")
FIXED_RELATIVE_RANK_POLICY = RankPolicy("relative", 1e-10)


@dataclass(frozen=True)
class NewtonSchulzConfig:
    """Quintic Newton-Schulz iteration parameters.

    The defaults are the standard Muon-lineage coefficients; they trade exact
    convergence to the polar factor for a fast, well-behaved approximation
    whose singular values land in a band around 1.
    """

    iterations: int = 5
    coeff_a: float = 3.4445
    coeff_b: float = -4.7750
    coeff_c: float = 2.0315
    normalization_epsilon: float = 1e-7

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError("iterations must be >= 1")
        if self.normalization_epsilon <= 0:
            raise InvalidInputError("normalization_epsilon must be positive")


# The fast default coefficients land singular values in a band around 1
# without converging, which caps cosine similarity to the exact polar factor
# near 0.98 no matter how many iterations run. This classical cubic schedule
# contracts singular values monotonically to 1 instead; use it where fidelity
# to the exact polar factor matters more than per-step cost.
CONVERGENT_NS_CONFIG = NewtonSchulzConfig(
    iterations=25, coeff_a=1.5, coeff_b=-0.5, coeff_c=0.0
)


def compact_svd(a: np.ndarray) -> SvdResult:
    """Compact SVD of a finite matrix.

    Raises NumericalFailureError (naming the shape) if the backend fails to
    converge, InvalidInputError on non-finite input.
    """
    a = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(
            f"SVD did not converge for {a.shape[0]}x{a.shape[1]} matrix"
        ) from exc
    return SvdResult(u=u, sigma=s, v=vt.T)


def nuclear_norm(a: np.ndarray) -> float:
    """Sum of singular values."""
    return float(np.sum(compact_svd(a).sigma))


def numerical_rank(a: np.ndarray, policy: RankPolicy = MACHINE_RANK_POLICY) -> int:
    """Count of singular values above the policy threshold; 0 for the zero matrix."""
    a = as_matrix(a)
    sigma = compact_svd(a).sigma
    sigma_max = float(sigma[0]) if sigma.size else 0.0
    if sigma_max == 0.0:
        return 0
    tau = policy.threshold(a.shape[0], a.shape[1], sigma_max)
    return int(np.count_nonzero(sigma > tau))


def exact_polar(a: np.ndarray, policy: RankPolicy = MACHINE_RANK_POLICY) -> np.ndarray:
    """Exact polar factor P(a) = U_r V_r^T, truncated at the rank tolerance.

    Returns the zero matrix of the same shape when a is numerically zero,
    so P(0) = 0 holds by construction.
    """
    a = as_matrix(a)
    svd = compact_svd(a)
    sigma_max = float(svd.sigma[0]) if svd.sigma.size else 0.0
    if sigma_max == 0.0:
        return np.zeros_like(a)
    tau = policy.threshold(a.shape[0], a.shape[1], sigma_max)
    r = int(np.count_nonzero(svd.sigma > tau))
    if r == 0:
        return np.zeros_like(a)
    return svd.u[:, :r] @ svd.v[:, :r].T


def frobenius_inner(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius inner product <a, b> = sum of element-wise products."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a * b))


def newton_schulz(a: np.ndarray, config: NewtonSchulzConfig = NewtonSchulzConfig()) -> np.ndarray:
    """Approximate polar factor via the quintic Newton-Schulz iteration.

    X_0 = a / (||a||_F + eps), then X <- ca*X + (cb*A + cc*A^2) @ X with
    A = X X^T. Tall inputs (rows > cols) are transposed so the Gram matrix is
    always taken on the short side, and transposed back at the end. Zero input
    short-circuits to zero output.
    """
    a = as_matrix(a)
    if not np.any(a):
        return np.zeros_like(a)
    ca, cb, cc = config.coeff_a, config.coeff_b, config.coeff_c
    transposed = a.shape[0] > a.shape[1]
    x = a.T if transposed else a
    x = x / (np.linalg.norm(x) + config.normalization_epsilon)
    # overflow is detected and raised explicitly, so silence the warning
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(config.iterations):
            gram = x @ x.T
            x = ca * x + (cb * gram + cc * gram @ gram) @ x
            if not np.all(np.isfinite(x)):
                raise NumericalFailureError(
                    f"Newton-Schulz produced non-finite values at iteration {it}"
                )
    return x.T if transposed else x
