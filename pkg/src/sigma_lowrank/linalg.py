"""Matrix factorizations and solvers used by the decomposition routines.

The Gram systems produced by the covariance-weighted factor updates are
symmetric, positive semi-definite and frequently ill-conditioned, so the
normal-equation solver is MINRES with explicit true-residual tracking and
a dense pseudo-inverse fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CholeskyBreakdown, NumericalError, ValidationError

__all__ = [
    "SymSolveConfig",
    "MinresResult",
    "sym_sqrt",
    "minres_solve",
    "pinv",
    "truncated_svd",
    "solve_gram",
]

# Consecutive MINRES iterations without residual improvement before the
# solver is declared stalled and solve_gram falls back to a dense solve.
STALL_WINDOW = 20


@dataclass(frozen=True)
class SymSolveConfig:
    """Tolerances for symmetric solves and regularized square roots.

    ``tol`` is a relative residual threshold, ``max_iters`` defaults to
    10x the system dimension when left unset, and ``epsilon_scale`` sets
    the ridge added to near-singular matrices as a fraction of the mean
    diagonal (trace/dim), keeping behavior independent of units.
    """

    tol: float = 1e-10
    max_iters: int | None = None
    epsilon_scale: float = 1e-6

    def __post_init__(self):
        if self.tol <= 0:
            raise ValidationError("tol must be > 0")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValidationError("max_iters must be >= 1")
        if self.epsilon_scale < 0:
            raise ValidationError("epsilon_scale must be >= 0")


@dataclass(frozen=True)
class MinresResult:
    x: np.ndarray
    converged: bool
    flag: str  # "converged" | "maxiter" | "stalled"
    iterations: int
    rel_residual: float


def _check_square_symmetric(s: np.ndarray, rel: float = 1e-8) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {s.shape}")
    scale = np.linalg.norm(s)
    if scale > 0 and np.linalg.norm(s - s.T) > rel * scale:
        raise ValidationError("matrix is not symmetric within tolerance")
    return 0.5 * (s + s.T)


def ridge_epsilon(s: np.ndarray, epsilon_scale: float) -> float:
    """Relative ridge: epsilon_scale * trace(S) / dim."""
    s = np.asarray(s)
    return float(epsilon_scale) * float(np.trace(s)) / s.shape[0]


def sym_sqrt(s, cfg: SymSolveConfig | None = None, method: str = "cholesky") -> np.ndarray:
    """Square root L of a symmetric PSD matrix with L @ L.T = S + eps*Id.

    ``cholesky`` returns the lower-triangular Cholesky factor of the
    ridge-regularized matrix and raises :class:`CholeskyBreakdown` if that
    still fails (callers may retry with ``method="svd"``).  ``svd`` returns
    ``U @ diag(sqrt(max(lambda, 0)))`` from the eigendecomposition of the
    regularized matrix, which tolerates rank deficiency.
    """
    cfg = cfg or SymSolveConfig()
    s = _check_square_symmetric(s)
    eps = ridge_epsilon(s, cfg.epsilon_scale)
    s_reg = s + eps * np.eye(s.shape[0])
    if method == "cholesky":
        try:
            return np.linalg.cholesky(s_reg)
        except np.linalg.LinAlgError as exc:
            raise CholeskyBreakdown(
                f"Cholesky failed after ridge eps={eps:.3e}; retry with method='svd'"
            ) from exc
    if method == "svd":
        lam, u = np.linalg.eigh(s_reg)
        return u * np.sqrt(np.clip(lam, 0.0, None))
    raise ValidationError(f"unknown sym_sqrt method {method!r}")


def _as_operator(a):
    if callable(a):
        return a
    mat = np.asarray(a, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"operator matrix must be square, got {mat.shape}")
    return lambda v: mat @ v


def _minres_krylov(apply_a, b, tol_abs: float, max_iters: int):
    """One Lanczos/Givens sweep (Paige & Saunders) from a zero start.

    Returns (best_x, best_residual_norm, iterations, hit) where hit is
    "converged", "stalled" (no improvement for STALL_WINDOW iterations),
    "exhausted" (iteration cap) or "breakdown" (invariant subspace).
    The true residual is evaluated each iteration and the best iterate kept.
    """
    n = b.size
    norm_b = float(np.linalg.norm(b))
    x = np.zeros(n)
    if norm_b == 0.0:
        return x, 0.0, 0, "converged"

    r1 = b.copy()
    y = b.copy()
    beta = norm_b
    oldb = 0.0
    r2 = r1
    dbar = epsln = sn = 0.0
    cs = -1.0
    phibar = beta
    w = np.zeros(n)
    w2 = np.zeros(n)

    best_x = x.copy()
    best_res = norm_b
    since_improved = 0
    itn = 0
    eps = np.finfo(np.float64).eps

    while itn < max_iters:
        itn += 1
        v = y / beta
        y = apply_a(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alpha = float(v @ y)
        y = y - (alpha / beta) * r2
        r1 = r2
        r2 = y
        oldb = beta
        beta = float(np.linalg.norm(r2))
        if not np.isfinite(alpha) or not np.isfinite(beta):
            raise NumericalError("non-finite value in MINRES iteration")

        oldeps = epsln
        delta = cs * dbar + sn * alpha
        gbar = sn * dbar - cs * alpha
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(np.hypot(gbar, beta), eps)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w

        res = float(np.linalg.norm(b - apply_a(x)))
        if res < best_res * (1.0 - 1e-12):
            best_res = res
            best_x = x.copy()
            since_improved = 0
        else:
            since_improved += 1

        if best_res <= tol_abs:
            return best_x, best_res, itn, "converged"
        if since_improved >= STALL_WINDOW:
            return best_x, best_res, itn, "stalled"
        if beta <= eps * norm_b:
            return best_x, best_res, itn, "breakdown"

    return best_x, best_res, itn, "exhausted"


def minres_solve(apply_a, b, cfg: SymSolveConfig | None = None) -> MinresResult:
    """Minimum-residual solve of a symmetric system A x = b.

    Runs Lanczos sweeps with true-residual tracking, restarting from the
    best iterate when a sweep stops making progress: the restart rebuilds
    Lanczos orthogonality, which is what limits attainable accuracy on
    ill-conditioned systems.  Returns the best iterate with flag
    "converged", "stalled" (a restart brought no improvement) or "maxiter".
    Singular but consistent systems converge to the minimum-norm
    least-squares solution because iterates stay in the Krylov space of A.
    """
    cfg = cfg or SymSolveConfig()
    apply_a = _as_operator(apply_a)
    b = np.asarray(b, dtype=np.float64).ravel()
    if not np.all(np.isfinite(b)):
        raise NumericalError("non-finite right-hand side")
    n = b.size
    budget = cfg.max_iters if cfg.max_iters is not None else 10 * n

    norm_b = float(np.linalg.norm(b))
    if norm_b == 0.0:
        return MinresResult(np.zeros(n), True, "converged", 0, 0.0)
    tol_abs = cfg.tol * norm_b

    x = np.zeros(n)
    best_res = norm_b
    total_iters = 0
    while True:
        r = b - apply_a(x)
        dx, _, used, hit = _minres_krylov(apply_a, r, tol_abs, budget - total_iters)
        total_iters += used
        candidate = x + dx
        res = float(np.linalg.norm(b - apply_a(candidate)))
        improved = res < best_res * (1.0 - 1e-12)
        if improved:
            x = candidate
            best_res = res
        if best_res <= tol_abs:
            return MinresResult(x, True, "converged", total_iters, best_res / norm_b)
        if total_iters >= budget or hit == "exhausted":
            return MinresResult(x, False, "maxiter", total_iters, best_res / norm_b)
        if not improved:
            return MinresResult(x, False, "stalled", total_iters, best_res / norm_b)


def pinv(a, rcond: float = 1e-12) -> np.ndarray:
    """Moore-Penrose pseudo-inverse; singular values below rcond*sigma_max drop."""
    return np.linalg.pinv(np.asarray(a, dtype=np.float64), rcond=rcond)


def truncated_svd(a, rank: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Leading ``rank`` singular triplets (U, s, V) with A ~= U @ diag(s) @ V.T.

    Signs are fixed so each left singular vector's largest-magnitude entry
    is positive, making the output deterministic across runs.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError(f"expected a matrix, got ndim={a.ndim}")
    if not 1 <= rank <= min(a.shape):
        raise ValidationError(f"rank {rank} out of range for shape {a.shape}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    u, s, v = u[:, :rank], s[:rank], vt[:rank].T
    for r in range(rank):
        i = int(np.argmax(np.abs(u[:, r])))
        if u[i, r] < 0:
            u[:, r] = -u[:, r]
            v[:, r] = -v[:, r]
    return u, s, v


def solve_gram(p_gram, rhs, cfg: SymSolveConfig | None = None) -> np.ndarray:
    """Least-squares solution of the normal equations (P^T P) x = P^T b.

    Runs :func:`minres_solve` on the Gram system and falls back to a dense
    pseudo-inverse solve when MINRES stalls or runs out of iterations, so
    the result always matches the explicit pinv(P) @ b solution.
    """
    cfg = cfg or SymSolveConfig()
    rhs = np.asarray(rhs, dtype=np.float64).ravel()
    result = minres_solve(p_gram, rhs, cfg)
    if result.converged:
        return result.x
    gram = p_gram if not callable(p_gram) else _materialize(p_gram, rhs.size)
    fallback = pinv(gram) @ rhs
    res_fb = np.linalg.norm(rhs - np.asarray(gram) @ fallback)
    res_mr = np.linalg.norm(rhs - np.asarray(gram) @ result.x)
    return fallback if res_fb <= res_mr else result.x


def _materialize(apply_a, n: int) -> np.ndarray:
    eye = np.eye(n)
    return np.column_stack([apply_a(eye[:, j]) for j in range(n)])
