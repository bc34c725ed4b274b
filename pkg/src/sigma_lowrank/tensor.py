"""Dense 4-way tensor algebra: index conventions, unfoldings, products.

Every array in this package follows one linearization: for a kernel tensor
of shape ``(T, S, H, W)`` the last index ``w`` varies fastest, then ``h``,
then ``s``, then ``t`` (NumPy C order).  Mode-n unfoldings, Khatri-Rao row
ordering and patch flattening in the convolution engine all derive from
this single convention, which is what makes the matrix-product view of
convolution line up exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

__all__ = [
    "CpFactors",
    "Tucker2Factors",
    "vec",
    "unvec",
    "unfold_mode",
    "fold_mode",
    "khatri_rao",
    "kronecker",
    "mode_product",
    "cp_reconstruct",
    "tucker2_reconstruct",
]


def _as_tensor4(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 4:
        raise ValidationError(f"expected a 4-way tensor, got ndim={k.ndim}")
    return k


@dataclass(frozen=True)
class CpFactors:
    """Rank-R factor set of a 4-way kernel: one column per rank-1 term.

    ``u_t, u_s, u_h, u_w`` have shapes (T,R), (S,R), (H,R), (W,R).
    """

    u_t: np.ndarray
    u_s: np.ndarray
    u_h: np.ndarray
    u_w: np.ndarray

    def __post_init__(self):
        cols = {m.shape[1] for m in self.factors}
        if len(cols) != 1:
            raise ValidationError(f"factor column counts differ: {sorted(cols)}")
        if self.rank < 1:
            raise ValidationError("rank must be >= 1")

    @property
    def factors(self) -> tuple[np.ndarray, ...]:
        return (self.u_t, self.u_s, self.u_h, self.u_w)

    @property
    def rank(self) -> int:
        return self.u_t.shape[1]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return tuple(m.shape[0] for m in self.factors)

    def param_count(self) -> int:
        return self.rank * sum(self.dims)


@dataclass(frozen=True)
class Tucker2Factors:
    """Core tensor (R_T, R_S, H, W) with channel factors (T,R_T) and (S,R_S)."""

    core: np.ndarray
    u_t: np.ndarray
    u_s: np.ndarray

    def __post_init__(self):
        if self.core.ndim != 4:
            raise ValidationError("core must be a 4-way tensor")
        if self.core.shape[0] != self.u_t.shape[1]:
            raise ValidationError(
                f"core mode-1 size {self.core.shape[0]} != u_t columns {self.u_t.shape[1]}"
            )
        if self.core.shape[1] != self.u_s.shape[1]:
            raise ValidationError(
                f"core mode-2 size {self.core.shape[1]} != u_s columns {self.u_s.shape[1]}"
            )

    @property
    def ranks(self) -> tuple[int, int]:
        return (self.u_t.shape[1], self.u_s.shape[1])

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.u_t.shape[0], self.u_s.shape[0], self.core.shape[2], self.core.shape[3])

    def param_count(self) -> int:
        t, s, h, w = self.dims
        r_t, r_s = self.ranks
        return t * r_t + s * r_s + r_t * r_s * h * w


def vec(a: np.ndarray) -> np.ndarray:
    """Column-major vectorization: vec(A)[m(j-1)+i] = A[i,j]."""
    return np.asarray(a).flatten(order="F")


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape((rows, cols), order="F")


def unfold_mode(k, n: int) -> np.ndarray:
    """Mode-n unfolding (n in 1..4) of a 4-way tensor.

    Row index is the mode-n index; columns run over the remaining modes in
    their original order with the last one varying fastest.  Mode 1 is the
    plain ``reshape(T, S*H*W)`` used to write convolution as a matrix
    product.
    """
    k = _as_tensor4(k)
    if n not in (1, 2, 3, 4):
        raise ValidationError(f"mode index must be in 1..4, got {n}")
    return np.moveaxis(k, n - 1, 0).reshape(k.shape[n - 1], -1)


def fold_mode(m, n: int, dims: tuple[int, int, int, int]) -> np.ndarray:
    """Inverse of :func:`unfold_mode`: fold_mode(unfold_mode(K, n), n, K.shape) == K."""
    m = np.asarray(m, dtype=np.float64)
    if n not in (1, 2, 3, 4):
        raise ValidationError(f"mode index must be in 1..4, got {n}")
    if len(dims) != 4 or any(d < 1 for d in dims):
        raise ValidationError(f"dims must be four positive integers, got {dims}")
    rest = tuple(dims[i] for i in range(4) if i != n - 1)
    expected = (dims[n - 1], int(np.prod(rest)))
    if m.shape != expected:
        raise ValidationError(f"matrix shape {m.shape} incompatible with dims {dims} mode {n}")
    return np.moveaxis(m.reshape((dims[n - 1],) + rest), 0, n - 1)


def khatri_rao(factors) -> np.ndarray:
    """Column-wise Kronecker product of matrices sharing a column count.

    Row ordering follows the package linearization: the last factor's row
    index varies fastest, so ``unfold_mode(cp_reconstruct(F), 1)`` equals
    ``F.u_t @ khatri_rao([F.u_s, F.u_h, F.u_w]).T``.
    """
    factors = [np.asarray(f, dtype=np.float64) for f in factors]
    if len(factors) < 2:
        raise ValidationError("khatri_rao needs at least two factors")
    cols = {f.shape[1] for f in factors}
    if len(cols) != 1:
        raise ValidationError(f"column counts differ: {sorted(cols)}")
    out = factors[0]
    for f in factors[1:]:
        out = (out[:, None, :] * f[None, :, :]).reshape(-1, f.shape[1])
    return out


def kronecker(a, b) -> np.ndarray:
    """Kronecker product; satisfies vec(AXB) = (B^T kron A) vec(X)."""
    return np.kron(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64))


def mode_product(k: np.ndarray, m: np.ndarray, axis: int) -> np.ndarray:
    """Contract matrix ``m`` (new_dim, old_dim) with tensor axis ``axis`` (0-based)."""
    moved = np.tensordot(m, np.asarray(k, dtype=np.float64), axes=(1, axis))
    return np.moveaxis(moved, 0, axis)


def cp_reconstruct(f: CpFactors) -> np.ndarray:
    """Dense tensor of the factor set: sum of rank-1 outer products."""
    return np.einsum("tr,sr,hr,wr->tshw", f.u_t, f.u_s, f.u_h, f.u_w)


def tucker2_reconstruct(f: Tucker2Factors) -> np.ndarray:
    """Dense tensor of core x_1 u_t x_2 u_s."""
    return np.einsum("abhw,ta,sb->tshw", f.core, f.u_t, f.u_s)
