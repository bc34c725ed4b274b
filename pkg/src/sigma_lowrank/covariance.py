"""Input-patch covariance estimation and the covariance-weighted norm.

The covariance of unfolded activation patches defines a norm on kernel
space whose value equals the root-mean-square output discrepancy of the
layer over the data that produced the patches.  With an identity
covariance it reduces to the plain Frobenius norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import linalg
from .errors import SingularRootError, ValidationError
from .linalg import SymSolveConfig
from .tensor import unfold_mode

__all__ = [
    "SigmaAccumulator",
    "SigmaRoot",
    "estimate_sigma",
    "sigma_root_from_matrix",
    "identity_root",
    "sigma_norm",
    "relative_recon_error",
]


@dataclass
class SigmaAccumulator:
    """Streaming sum of patch outer products u @ u.T.

    Batches may be accumulated independently and merged; merging is exact
    (sums and counts add), which is the contract for parallel reduction.
    """

    dim: int
    sum_matrix: np.ndarray = field(default=None)  # type: ignore[assignment]
    count: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("patch dimension must be >= 1")
        if self.sum_matrix is None:
            self.sum_matrix = np.zeros((self.dim, self.dim))

    def add(self, patches) -> "SigmaAccumulator":
        p = np.asarray(patches, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != self.dim:
            raise ValidationError(
                f"patch matrix rows {p.shape} do not match accumulator dim {self.dim}"
            )
        self.sum_matrix += p @ p.T
        self.count += p.shape[1]
        return self

    def merge(self, other: "SigmaAccumulator") -> "SigmaAccumulator":
        if other.dim != self.dim:
            raise ValidationError(f"cannot merge accumulators of dims {self.dim} and {other.dim}")
        self.sum_matrix += other.sum_matrix
        self.count += other.count
        return self

    def finalize(self, normalization: str = "mean") -> np.ndarray:
        """Covariance estimate: sum/count under "mean", raw sum under "sum"."""
        if normalization == "mean":
            if self.count == 0:
                raise ValidationError("no patches accumulated")
            sigma = self.sum_matrix / self.count
        elif normalization == "sum":
            sigma = self.sum_matrix.copy()
        else:
            raise ValidationError(f"unknown normalization {normalization!r}")
        return 0.5 * (sigma + sigma.T)


def estimate_sigma(patch_batches, normalization: str = "mean") -> SigmaAccumulator:
    """Accumulate a stream of patch matrices sharing a row dimension."""
    acc = None
    for batch in patch_batches:
        batch = np.asarray(batch, dtype=np.float64)
        if acc is None:
            acc = SigmaAccumulator(dim=batch.shape[0])
        acc.add(batch)
    if acc is None:
        raise ValidationError("empty patch stream")
    if normalization not in ("mean", "sum"):
        raise ValidationError(f"unknown normalization {normalization!r}")
    return acc


@dataclass(frozen=True)
class SigmaRoot:
    """Square-root factor L with L @ L.T equal to the (regularized) covariance."""

    l: np.ndarray
    epsilon: float
    provenance: str = ""
    lower_triangular: bool = True

    @property
    def dim(self) -> int:
        return self.l.shape[0]

    def inv_transpose_apply(self, b: np.ndarray) -> np.ndarray:
        """Solve L.T @ X = B, used to map factors back out of whitened coordinates."""
        if not np.all(np.isfinite(self.l)):
            raise SingularRootError("square root is singular; increase epsilon")
        if self.lower_triangular and np.any(
            np.abs(np.diag(self.l)) <= np.finfo(np.float64).tiny
        ):
            raise SingularRootError("square root is singular; increase epsilon")
        try:
            if self.lower_triangular:
                x = scipy.linalg.solve_triangular(self.l, b, lower=True, trans="T")
            else:
                x = np.linalg.solve(self.l.T, b)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise SingularRootError("square root is singular; increase epsilon") from exc
        residual = np.linalg.norm(self.l.T @ x - b)
        if not np.isfinite(residual) or residual > 1e-8 * max(np.linalg.norm(b), 1.0):
            raise SingularRootError("square root is numerically singular; increase epsilon")
        return x


def sigma_root_from_matrix(
    sigma,
    cfg: SymSolveConfig | None = None,
    method: str = "cholesky",
    provenance: str = "",
) -> SigmaRoot:
    """Factor a covariance matrix, falling back to the eigenvalue square root
    when Cholesky breaks down on a semi-definite input."""
    cfg = cfg or SymSolveConfig()
    sigma = np.asarray(sigma, dtype=np.float64)
    eps = linalg.ridge_epsilon(sigma, cfg.epsilon_scale)
    if method == "cholesky":
        try:
            l = linalg.sym_sqrt(sigma, cfg, method="cholesky")
            return SigmaRoot(l, eps, provenance, lower_triangular=True)
        except linalg.CholeskyBreakdown:
            method = "svd"
    l = linalg.sym_sqrt(sigma, cfg, method="svd")
    return SigmaRoot(l, eps, provenance, lower_triangular=False)


def identity_root(dim: int) -> SigmaRoot:
    return SigmaRoot(np.eye(dim), 0.0, "identity", lower_triangular=True)


def sigma_norm(k, k_tilde, root: SigmaRoot) -> float:
    """Weighted kernel distance ||unfold_mode(K - K~, 1) @ L||_F.

    Equals the root-mean-square output difference of the two convolutions
    over the patch distribution whose covariance L factors; with L = Id it
    is exactly the Frobenius norm of K - K~.
    """
    k = np.asarray(k, dtype=np.float64)
    k_tilde = np.asarray(k_tilde, dtype=np.float64)
    if k.shape != k_tilde.shape:
        raise ValidationError(f"kernel shapes differ: {k.shape} vs {k_tilde.shape}")
    diff = unfold_mode(k - k_tilde, 1)
    if diff.shape[1] != root.dim:
        raise ValidationError(
            f"root dim {root.dim} does not match kernel patch dim {diff.shape[1]}"
        )
    return float(np.linalg.norm(diff @ root.l))


def relative_recon_error(k, k_tilde, root: SigmaRoot | None = None) -> float:
    """||K - K~|| / ||K|| in the Frobenius norm, or the weighted norm if a
    root is given."""
    k = np.asarray(k, dtype=np.float64)
    k_tilde = np.asarray(k_tilde, dtype=np.float64)
    if root is None:
        denom = float(np.linalg.norm(k))
        num = float(np.linalg.norm(k - k_tilde))
    else:
        zero = np.zeros_like(k)
        denom = sigma_norm(k, zero, root)
        num = sigma_norm(k, k_tilde, root)
    if denom == 0.0:
        raise ValidationError("original kernel has zero norm")
    return num / denom
