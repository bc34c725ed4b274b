"""Rank estimation from singular spectra and the alpha-interpolated rank rule.

The estimator counts the singular values a global analytic variational
Bayes matrix factorization would retain under isotropic Gaussian noise;
when the noise level is unknown it is chosen by minimizing the variational
free energy over a bracketed interval with a deterministic grid scan plus
golden-section refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .decomp import cp_max_rank
from .errors import ValidationError
from .tensor import unfold_mode

__all__ = ["RankPlan", "vbmf_rank", "r_alpha", "plan_ranks"]


@dataclass(frozen=True)
class RankPlan:
    """Chosen ranks for one layer, with the estimates they interpolate.

    ``ranks`` holds one component for cp/svd and (R_T, R_S) for tucker2;
    ``vbmf_ranks`` / ``max_ranks`` are the matching interpolation endpoints.
    """

    method: str
    ranks: tuple[int, ...]
    alpha: float
    vbmf_ranks: tuple[int, ...]
    max_ranks: tuple[int, ...]

    def __post_init__(self):
        for r, r_max in zip(self.ranks, self.max_ranks):
            if not 1 <= r <= r_max:
                raise ValidationError(f"rank {r} outside [1, {r_max}]")


def _evb_free_energy(sigma2: float, dims: tuple[int, int], s: np.ndarray, x_bar: float) -> float:
    """Noise-profile of the variational free energy (constants dropped)."""
    l_dim, m_dim = dims
    alpha = l_dim / m_dim
    x = np.maximum(s**2 / (m_dim * sigma2), 1e-300)
    above = x > x_bar
    z1, z2 = x[above], x[~above]
    tau = 0.5 * (z1 - (1 + alpha) + np.sqrt((z1 - (1 + alpha)) ** 2 - 4 * alpha))
    return float(
        np.sum(z2 - np.log(z2))
        + np.sum(z1 - tau)
        + np.sum(np.log((tau + 1) / z1))
        + alpha * np.sum(np.log(tau / alpha + 1))
    )


def _golden_section(f, lo: float, hi: float, iters: int = 120) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = math.log(lo), math.log(hi)
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(math.exp(c)), f(math.exp(d))
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(math.exp(d))
        if b - a < 1e-14:
            break
    return math.exp(0.5 * (a + b))


def _estimate_noise(dims: tuple[int, int], s: np.ndarray, x_bar: float) -> float:
    """Deterministic bracketed search for the free-energy-minimizing noise."""
    l_dim, m_dim = dims
    alpha = l_dim / m_dim
    # Components that could plausibly be signal under the threshold bound the
    # noise from below; total energy bounds it from above.
    idx = int(min(math.ceil(l_dim / (1 + alpha)) - 1, l_dim)) - 1
    idx = min(max(idx, -1), l_dim - 2)
    lower = max(s[idx + 1] ** 2 / (m_dim * x_bar), float(np.mean(s[idx + 1 :] ** 2)) / m_dim)
    upper = float(np.sum(s**2)) / (l_dim * m_dim)
    floor = (np.finfo(np.float64).eps * s[0]) ** 2 / m_dim
    lower = max(lower, floor)
    if not lower < upper:
        return max(lower, floor)

    def objective(sigma2: float) -> float:
        return _evb_free_energy(sigma2, dims, s, x_bar)

    grid = np.exp(np.linspace(math.log(lower), math.log(upper), 256))
    values = [objective(g) for g in grid]
    best = int(np.argmin(values))
    lo = grid[max(best - 1, 0)]
    hi = grid[min(best + 1, len(grid) - 1)]
    if lo == hi:
        return float(grid[best])
    return _golden_section(objective, lo, hi)


def vbmf_rank(m, noise_variance: float | None = None) -> int:
    """Number of singular components retained by the analytic variational
    Bayes solution; symmetric in transposition and invariant to scaling
    when the noise level is jointly estimated."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValidationError("vbmf_rank expects a non-empty matrix")
    if a.shape[0] > a.shape[1]:
        a = a.T
    l_dim, m_dim = a.shape
    s = np.linalg.svd(a, compute_uv=False)
    if s[0] <= 0.0:
        return 0
    alpha = l_dim / m_dim
    tau_bar = 2.5129 * math.sqrt(alpha)
    x_bar = (1 + tau_bar) * (1 + alpha / tau_bar)
    if noise_variance is None:
        noise_variance = _estimate_noise((l_dim, m_dim), s, x_bar)
    if noise_variance <= 0:
        raise ValidationError("noise variance must be positive")
    threshold = math.sqrt(m_dim * noise_variance * x_bar)
    return int(np.sum(s > threshold))


def r_alpha(r_vbmf: int, r_max: int, alpha: float) -> int:
    """Interpolated rank round(r_vbmf + (1 - alpha) * (r_max - r_vbmf)).

    Rounding is half away from zero and the result is clamped to
    [1, r_max]; alpha > 1 extrapolates below r_vbmf.
    """
    if r_max < 1:
        raise ValidationError("r_max must be >= 1")
    if not 0 <= r_vbmf <= r_max:
        raise ValidationError(f"r_vbmf {r_vbmf} outside [0, {r_max}]")
    value = r_vbmf + (1.0 - alpha) * (r_max - r_vbmf)
    rounded = math.floor(value + 0.5) if value >= 0 else math.ceil(value - 0.5)
    return int(min(max(rounded, 1), r_max))


def plan_ranks(k, method: str, alpha: float) -> RankPlan:
    """Rank plan for one kernel: estimate per-unfolding ranks and interpolate.

    cp uses the largest estimate over the four mode unfoldings against the
    bound T*S*H*W / max(T,S,H,W); tucker2 estimates the two channel modes
    against their own sizes; svd applies to a plain matrix.
    """
    a = np.asarray(k, dtype=np.float64)
    if method == "cp":
        if a.ndim != 4:
            raise ValidationError("cp planning requires a 4-way kernel")
        r_vbmf = max(vbmf_rank(unfold_mode(a, n)) for n in (1, 2, 3, 4))
        r_max = cp_max_rank(a.shape)
        return RankPlan("cp", (r_alpha(r_vbmf, r_max, alpha),), alpha, (r_vbmf,), (r_max,))
    if method == "tucker2":
        if a.ndim != 4:
            raise ValidationError("tucker2 planning requires a 4-way kernel")
        v_t = vbmf_rank(unfold_mode(a, 1))
        v_s = vbmf_rank(unfold_mode(a, 2))
        t, s = a.shape[0], a.shape[1]
        ranks = (r_alpha(v_t, t, alpha), r_alpha(v_s, s, alpha))
        return RankPlan("tucker2", ranks, alpha, (v_t, v_s), (t, s))
    if method == "svd":
        if a.ndim != 2:
            raise ValidationError("svd planning requires a matrix")
        v = vbmf_rank(a)
        r_max = min(a.shape)
        return RankPlan("svd", (r_alpha(v, r_max, alpha),), alpha, (v,), (r_max,))
    raise ValidationError(f"unknown method {method!r}")
