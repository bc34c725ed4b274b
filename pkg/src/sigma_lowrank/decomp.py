"""Low-rank decompositions of 4-way kernels, plain and covariance-weighted.

The covariance-weighted variants minimize ``||unfold1(K - K~) @ L||_F``
by block coordinate descent: each factor update is a linear least-squares
problem.  The output-channel factor has Kronecker structure that admits a
closed-form solve; the remaining blocks assemble the normal-equation Gram
matrix and right-hand side without materializing the full design matrix,
then call :func:`sigma_lowrank.linalg.solve_gram`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import SigmaRoot, sigma_norm
from .errors import ValidationError
from .linalg import SymSolveConfig, solve_gram, truncated_svd
from .tensor import (
    CpFactors,
    Tucker2Factors,
    cp_reconstruct,
    khatri_rao,
    mode_product,
    tucker2_reconstruct,
    unfold_mode,
)

__all__ = [
    "AlsConfig",
    "SvdFactors",
    "cp_als",
    "tucker2_als",
    "cp_als_sigma",
    "tucker2_als_sigma",
    "greedy_deflation_sigma",
    "svd_sigma",
    "wals_tucker2",
    "cp_max_rank",
]

_CP_MODES = ("t", "s", "h", "w")


@dataclass(frozen=True)
class AlsConfig:
    """Sweep budget, stopping rule and initialization policy for ALS runs.

    ``init`` is one of ``frobenius_warm_start`` (weighted variants start
    from the converged unweighted fit; plain variants treat it as their
    deterministic default), ``hosvd`` (truncated SVDs of the unfoldings)
    or ``random`` (Gaussian, seeded).
    """

    max_sweeps: int = 50
    rel_tol: float = 1e-6
    init: str = "frobenius_warm_start"
    seed: int | None = None
    solver: SymSolveConfig = field(default_factory=SymSolveConfig)

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValidationError("max_sweeps must be >= 1")
        if self.rel_tol <= 0:
            raise ValidationError("rel_tol must be > 0")
        if self.init not in ("frobenius_warm_start", "hosvd", "random"):
            raise ValidationError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class SvdFactors:
    """Two-factor form A @ B of a low-rank matrix."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.a.shape[1] != self.b.shape[0]:
            raise ValidationError(
                f"inner dimensions differ: {self.a.shape[1]} vs {self.b.shape[0]}"
            )

    @property
    def rank(self) -> int:
        return self.a.shape[1]

    def reconstruct(self) -> np.ndarray:
        return self.a @ self.b

    def param_count(self) -> int:
        return self.a.size + self.b.size


def cp_max_rank(dims) -> int:
    t, s, h, w = dims
    return (t * s * h * w) // max(t, s, h, w)


def _as_kernel(k) -> np.ndarray:
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 4:
        raise ValidationError("kernel must be a 4-way tensor")
    return k


def _check_cp_rank(dims, rank: int):
    if rank < 1:
        raise ValidationError("rank must be >= 1")
    bound = cp_max_rank(dims)
    if rank > bound:
        raise ValidationError(f"rank {rank} exceeds bound {bound} for dims {dims}")


def _rng(cfg: AlsConfig) -> np.random.Generator:
    return np.random.default_rng(0 if cfg.seed is None else cfg.seed)


def _stop(prev: float, cur: float, rel_tol: float) -> bool:
    return abs(prev - cur) <= rel_tol * max(prev, np.finfo(np.float64).tiny)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _svd_columns(mat: np.ndarray, rank: int, rng: np.random.Generator) -> np.ndarray:
    """Leading left singular vectors, padded with random columns past the
    matrix rank bound so any CP rank can be initialized deterministically."""
    avail = min(rank, min(mat.shape))
    u, _, _ = truncated_svd(mat, avail)
    if avail == rank:
        return u
    pad = rng.standard_normal((mat.shape[0], rank - avail))
    return np.hstack([u, pad])


def _cp_init(k: np.ndarray, rank: int, cfg: AlsConfig) -> CpFactors:
    rng = _rng(cfg)
    if cfg.init == "random":
        return CpFactors(*(rng.standard_normal((d, rank)) for d in k.shape))
    return CpFactors(*(_svd_columns(unfold_mode(k, n), rank, rng) for n in (1, 2, 3, 4)))


def _rebalance(f: CpFactors) -> CpFactors:
    """Spread each rank-1 term's scale evenly over the four factors."""
    mats = [m.copy() for m in f.factors]
    for r in range(f.rank):
        norms = np.array([np.linalg.norm(m[:, r]) for m in mats])
        if np.any(norms == 0):
            continue
        target = float(np.prod(norms)) ** 0.25
        for m, nrm in zip(mats, norms):
            m[:, r] *= target / nrm
    return CpFactors(*mats)


# ---------------------------------------------------------------------------
# Frobenius baselines
# ---------------------------------------------------------------------------


def cp_als(k, rank: int, cfg: AlsConfig | None = None) -> tuple[CpFactors, list[float]]:
    """Unweighted CP fit by alternating least squares.

    Returns the factor set and the Frobenius objective trace (initial value
    plus one entry per sweep); the trace is non-increasing.
    """
    k = _as_kernel(k)
    cfg = cfg or AlsConfig()
    _check_cp_rank(k.shape, rank)
    factors = _cp_init(k, rank, cfg)
    unfolds = [unfold_mode(k, n) for n in (1, 2, 3, 4)]
    trace = [float(np.linalg.norm(k - cp_reconstruct(factors)))]
    for _ in range(cfg.max_sweeps):
        mats = list(factors.factors)
        for n in range(4):
            others = [mats[m] for m in range(4) if m != n]
            z = khatri_rao(others)
            gram = np.ones((rank, rank))
            for u in others:
                gram *= u.T @ u
            mats[n] = unfolds[n] @ z @ np.linalg.pinv(gram)
        factors = _rebalance(CpFactors(*mats))
        trace.append(float(np.linalg.norm(k - cp_reconstruct(factors))))
        if _stop(trace[-2], trace[-1], cfg.rel_tol):
            break
    return factors, trace


def _tucker2_check_ranks(dims, r_t: int, r_s: int):
    t, s = dims[0], dims[1]
    if not 1 <= r_t <= t:
        raise ValidationError(f"R_T={r_t} out of range 1..{t}")
    if not 1 <= r_s <= s:
        raise ValidationError(f"R_S={r_s} out of range 1..{s}")


def _tucker2_hosvd(k: np.ndarray, r_t: int, r_s: int) -> Tucker2Factors:
    u_t, _, _ = truncated_svd(unfold_mode(k, 1), r_t)
    u_s, _, _ = truncated_svd(unfold_mode(k, 2), r_s)
    core = mode_product(mode_product(k, u_t.T, 0), u_s.T, 1)
    return Tucker2Factors(core, u_t, u_s)


def _lstsq_rows(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimum-norm U with U @ design ~= target."""
    return np.linalg.lstsq(design.T, target.T, rcond=None)[0].T


def _tucker2_sweeps(
    k: np.ndarray,
    factors: Tucker2Factors,
    cfg: AlsConfig,
    max_sweeps: int,
) -> tuple[Tucker2Factors, list[float]]:
    k1, k2 = unfold_mode(k, 1), unfold_mode(k, 2)
    trace = [float(np.linalg.norm(k - tucker2_reconstruct(factors)))]
    for _ in range(max_sweeps):
        b = unfold_mode(mode_product(factors.core, factors.u_s, 1), 1)
        u_t = _lstsq_rows(b, k1)
        c = unfold_mode(mode_product(factors.core, u_t, 0), 2)
        u_s = _lstsq_rows(c, k2)
        core = mode_product(mode_product(k, np.linalg.pinv(u_t), 0), np.linalg.pinv(u_s), 1)
        factors = Tucker2Factors(core, u_t, u_s)
        trace.append(float(np.linalg.norm(k - tucker2_reconstruct(factors))))
        if _stop(trace[-2], trace[-1], cfg.rel_tol):
            break
    return factors, trace


def tucker2_als(
    k, r_t: int, r_s: int, cfg: AlsConfig | None = None
) -> tuple[Tucker2Factors, list[float]]:
    """Unweighted Tucker2 fit: truncated-SVD initialization of the channel
    factors followed by alternating exact least-squares updates.

    Deterministic for fixed inputs; the final error never exceeds the
    initialization's truncation error.
    """
    k = _as_kernel(k)
    cfg = cfg or AlsConfig()
    _tucker2_check_ranks(k.shape, r_t, r_s)
    return _tucker2_sweeps(k, _tucker2_hosvd(k, r_t, r_s), cfg, cfg.max_sweeps)


# ---------------------------------------------------------------------------
# covariance-weighted CP
# ---------------------------------------------------------------------------


def _root_tensor(root: SigmaRoot, dims) -> np.ndarray:
    _, s, h, w = dims
    if root.dim != s * h * w:
        raise ValidationError(f"root dim {root.dim} != S*H*W = {s * h * w}")
    return root.l.reshape(s, h, w, root.dim)


def cp_sigma_factor_update(
    k, factors: CpFactors, root: SigmaRoot, mode: str, cfg: AlsConfig | None = None
) -> CpFactors:
    """Exact weighted least-squares update of one CP factor, others fixed.

    The output-channel block solves ``min ||K1 L - U (L^T Z)^T||`` in closed
    form (Z the Khatri-Rao of the other factors).  The remaining blocks
    contract L with the two untouched factors to build the Gram matrix and
    right-hand side of the normal equations directly.
    """
    k = _as_kernel(k)
    cfg = cfg or AlsConfig()
    if mode not in _CP_MODES:
        raise ValidationError(f"mode must be one of {_CP_MODES}, got {mode!r}")
    kl = unfold_mode(k, 1) @ root.l
    u_t, u_s, u_h, u_w = factors.factors

    if mode == "t":
        m = root.l.T @ khatri_rao([u_s, u_h, u_w])  # (dim, R)
        new_t = np.linalg.lstsq(m, kl.T, rcond=None)[0].T
        return replace(factors, u_t=new_t)

    lt = _root_tensor(root, k.shape)
    if mode == "s":
        c = np.einsum("shwj,hr,wr->rsj", lt, u_h, u_w)
    elif mode == "h":
        c = np.einsum("shwj,sr,wr->rhj", lt, u_s, u_w)
    else:
        c = np.einsum("shwj,sr,hr->rwj", lt, u_s, u_h)
    rank, mode_dim = c.shape[0], c.shape[1]
    gram_t = u_t.T @ u_t
    gram = np.einsum("rq,rij,qlj->riql", gram_t, c, c).reshape(
        rank * mode_dim, rank * mode_dim
    )
    rhs = np.einsum("rij,rj->ri", c, u_t.T @ kl).reshape(-1)
    x = solve_gram(gram, rhs, cfg.solver)
    new = x.reshape(rank, mode_dim).T
    return replace(factors, **{f"u_{mode}": new})


def cp_als_sigma(
    k, root: SigmaRoot, rank: int, cfg: AlsConfig | None = None
) -> tuple[CpFactors, list[float]]:
    """CP fit under the covariance-weighted norm.

    Per sweep the four factors are updated in T, S, H, W order, each by an
    exact least-squares solve, so the weighted objective is non-increasing
    per update up to solver tolerance.  The trace holds the initial
    objective plus one entry per factor update.
    """
    k = _as_kernel(k)
    cfg = cfg or AlsConfig()
    _check_cp_rank(k.shape, rank)
    if root.dim != k.shape[1] * k.shape[2] * k.shape[3]:
        raise ValidationError(f"root dim {root.dim} does not match kernel {k.shape}")
    if cfg.init == "frobenius_warm_start":
        factors, _ = cp_als(k, rank, replace(cfg, init="hosvd"))
    else:
        factors = _cp_init(k, rank, cfg)
    trace = [sigma_norm(k, cp_reconstruct(factors), root)]
    per_sweep = len(_CP_MODES)
    for _ in range(cfg.max_sweeps):
        for mode in _CP_MODES:
            factors = cp_sigma_factor_update(k, factors, root, mode, cfg)
            trace.append(sigma_norm(k, cp_reconstruct(factors), root))
        factors = _rebalance(factors)
        if _stop(trace[-1 - per_sweep], trace[-1], cfg.rel_tol):
            break
    return factors, trace


# ---------------------------------------------------------------------------
# covariance-weighted Tucker2
# ---------------------------------------------------------------------------


def tucker2_sigma_factor_update(
    k, factors: Tucker2Factors, root: SigmaRoot, which: str, cfg: AlsConfig | None = None
) -> Tucker2Factors:
    """Exact weighted least-squares update of u_t, u_s or the core."""
    k = _as_kernel(k)
    cfg = cfg or AlsConfig()
    kl = unfold_mode(k, 1) @ root.l
    core, u_t, u_s = factors.core, factors.u_t, factors.u_s

    if which == "t":
        b = unfold_mode(mode_product(core, u_s, 1), 1) @ root.l  # (R_T, dim)
        new_t = np.linalg.lstsq(b.T, kl.T, rcond=None)[0].T
        return replace(factors, u_t=new_t)

    lt = _root_tensor(root, k.shape)
    gram_t = u_t.T @ u_t
    utkl = u_t.T @ kl

    if which == "s":
        c = np.einsum("abhw,shwj->absj", core, lt)  # (R_T, R_S, S, dim)
        r_s, s_dim = c.shape[1], c.shape[2]
        gram = np.einsum("absj,ac,cdvj->bsdv", c, gram_t, c).reshape(
            r_s * s_dim, r_s * s_dim
        )
        rhs = np.einsum("absj,aj->bs", c, utkl).reshape(-1)
        x = solve_gram(gram, rhs, cfg.solver)
        return replace(factors, u_s=x.reshape(r_s, s_dim).T)

    if which == "g":
        d = np.einsum("sb,shwj->bhwj", u_s, lt)  # (R_S, H, W, dim)
        d_flat = d.reshape(-1, root.dim)
        gram = np.kron(gram_t, d_flat @ d_flat.T)
        rhs = (utkl @ d_flat.T).reshape(-1)
        x = solve_gram(gram, rhs, cfg.solver)
        new_core = x.reshape(core.shape[0], *d.shape[:3])
        return replace(factors, core=new_core)

    raise ValidationError(f"which must be 't', 's' or 'g', got {which!r}")


def tucker2_als_sigma(
    k, root: SigmaRoot, r_t: int, r_s: int, cfg: AlsConfig | None = None
) -> tuple[Tucker2Factors, list[float]]:
    """Tucker2 fit under the covariance-weighted norm.

    Updates u_t, u_s and the core in that order each sweep; initialization
    defaults to the converged unweighted fit.
    """
    k = _as_kernel(k)
    cfg = cfg or AlsConfig()
    _tucker2_check_ranks(k.shape, r_t, r_s)
    if root.dim != k.shape[1] * k.shape[2] * k.shape[3]:
        raise ValidationError(f"root dim {root.dim} does not match kernel {k.shape}")
    if cfg.init == "frobenius_warm_start":
        factors, _ = tucker2_als(k, r_t, r_s, cfg)
    elif cfg.init == "hosvd":
        factors = _tucker2_hosvd(k, r_t, r_s)
    else:
        rng = _rng(cfg)
        factors = Tucker2Factors(
            rng.standard_normal((r_t, r_s, k.shape[2], k.shape[3])),
            rng.standard_normal((k.shape[0], r_t)),
            rng.standard_normal((k.shape[1], r_s)),
        )
    trace = [sigma_norm(k, tucker2_reconstruct(factors), root)]
    for _ in range(cfg.max_sweeps):
        for which in ("t", "s", "g"):
            factors = tucker2_sigma_factor_update(k, factors, root, which, cfg)
            trace.append(sigma_norm(k, tucker2_reconstruct(factors), root))
        if _stop(trace[-4], trace[-1], cfg.rel_tol):
            break
    return factors, trace


# ---------------------------------------------------------------------------
# greedy deflation, weighted SVD, element-weighted Tucker2
# ---------------------------------------------------------------------------


def greedy_deflation_sigma(
    k, root: SigmaRoot, rank: int, cfg: AlsConfig | None = None
) -> tuple[CpFactors, list[float]]:
    """Rank-R fit by repeated rank-1 fitting and subtraction.

    Each step fits a single rank-1 term to the current residual under the
    weighted norm and deflates it.  The returned trace holds the weighted
    residual norm before any step and after each one (non-increasing, since
    the zero term is always admissible).
    """
    k = _as_kernel(k)
    cfg = cfg or AlsConfig()
    _check_cp_rank(k.shape, rank)
    residual = k.copy()
    zero = np.zeros_like(k)
    columns: list[list[np.ndarray]] = [[], [], [], []]
    trace = [sigma_norm(residual, zero, root)]
    for _ in range(rank):
        step, _ = cp_als_sigma(residual, root, 1, cfg)
        residual = residual - cp_reconstruct(step)
        for store, mat in zip(columns, step.factors):
            store.append(mat[:, 0])
        trace.append(sigma_norm(residual, zero, root))
    factors = CpFactors(*(np.column_stack(cols) for cols in columns))
    return factors, trace


def svd_sigma(w, root: SigmaRoot, rank: int) -> SvdFactors:
    """Best rank-R approximation of a matrix in the covariance-weighted norm.

    Truncated SVD of W @ L followed by mapping the right factor back
    through L^{-1}; optimal by Eckart-Young in the transformed coordinates,
    so it is a global minimizer, not just a stationary point.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ValidationError("svd_sigma expects a matrix")
    if root.dim != w.shape[1]:
        raise ValidationError(f"root dim {root.dim} != matrix columns {w.shape[1]}")
    if not 1 <= rank <= min(w.shape):
        raise ValidationError(f"rank {rank} out of range for shape {w.shape}")
    u, s, v = truncated_svd(w @ root.l, rank)
    b = root.inv_transpose_apply(v * s).T
    return SvdFactors(u, b)


def wals_tucker2(
    k, weights, r_t: int, r_s: int, cfg: AlsConfig | None = None
) -> tuple[Tucker2Factors, list[float]]:
    """Element-weighted Tucker2: minimize ||weights * (K - K~)||_F.

    Majorization by imputation: with normalized squared weights
    ``hn = (weights / max)^2`` the surrogate data ``hn*K + (1-hn)*K~`` is
    refit by one warm-started unweighted sweep per outer iteration, which
    keeps the weighted objective non-increasing.
    """
    k = _as_kernel(k)
    cfg = cfg or AlsConfig()
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != k.shape:
        raise ValidationError(f"weights shape {weights.shape} != kernel shape {k.shape}")
    if np.any(weights < 0):
        raise ValidationError("weights must be non-negative")
    wmax = weights.max()
    if wmax == 0:
        raise ValidationError("weights are all zero")
    _tucker2_check_ranks(k.shape, r_t, r_s)
    hn = (weights / wmax) ** 2

    def weighted_obj(recon: np.ndarray) -> float:
        return float(np.linalg.norm(weights * (k - recon)))

    factors = _tucker2_hosvd(hn * k, r_t, r_s)
    recon = tucker2_reconstruct(factors)
    trace = [weighted_obj(recon)]
    for _ in range(cfg.max_sweeps):
        x = hn * k + (1.0 - hn) * recon
        factors, _ = _tucker2_sweeps(x, factors, cfg, max_sweeps=1)
        recon = tucker2_reconstruct(factors)
        trace.append(weighted_obj(recon))
        if _stop(trace[-2], trace[-1], cfg.rel_tol):
            break
    return factors, trace
