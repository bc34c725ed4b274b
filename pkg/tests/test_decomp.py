import numpy as np
import pytest

from sigma_lowrank import (
    AlsConfig,
    CpFactors,
    SymSolveConfig,
    Tucker2Factors,
    ValidationError,
    cp_als,
    cp_als_sigma,
    cp_reconstruct,
    greedy_deflation_sigma,
    identity_root,
    relative_recon_error,
    sigma_norm,
    sigma_root_from_matrix,
    svd_sigma,
    truncated_svd,
    tucker2_als,
    tucker2_als_sigma,
    tucker2_reconstruct,
    wals_tucker2,
)
from sigma_lowrank.decomp import (
    cp_max_rank,
    cp_sigma_factor_update,
    tucker2_sigma_factor_update,
)

from oracles import (
    dense_p_cp,
    dense_p_tucker2,
    oracle_factor_solution,
    random_spd,
)

NO_RIDGE = SymSolveConfig(epsilon_scale=0.0)


def random_cp_kernel(rng, dims, rank):
    f = CpFactors(*(rng.standard_normal((d, rank)) for d in dims))
    return cp_reconstruct(f)


def random_root(rng, dims, cond=None):
    dim = dims[1] * dims[2] * dims[3]
    return sigma_root_from_matrix(random_spd(rng, dim, cond=cond), NO_RIDGE)


def assert_trace_non_increasing(trace, slack=1e-8):
    for prev, cur in zip(trace, trace[1:]):
        assert cur <= prev * (1 + slack) + 1e-12, f"trace increased: {prev} -> {cur}"


def sigma_objective(k, factors, root):
    recon = (
        cp_reconstruct(factors) if isinstance(factors, CpFactors) else tucker2_reconstruct(factors)
    )
    return sigma_norm(k, recon, root)


def oracle_cp_als(k, l_mat, rank, rng, restarts=8, sweeps=60):
    """Dense-design-matrix ALS with random restarts; returns the best
    objective found.  Everything goes through explicit pinv solves."""
    from sigma_lowrank.tensor import unfold_mode

    best = np.inf
    for _ in range(restarts):
        factors = CpFactors(*(rng.standard_normal((d, rank)) for d in k.shape))
        for _ in range(sweeps):
            for mode in ("t", "s", "h", "w"):
                p, y = dense_p_cp(k, factors, l_mat, mode)
                x = oracle_factor_solution(p, y)
                mode_dim = getattr(factors, f"u_{mode}").shape[0]
                new = x.reshape(rank, mode_dim).T
                factors = CpFactors(
                    **{
                        f"u_{m}": (new if m == mode else getattr(factors, f"u_{m}"))
                        for m in ("t", "s", "h", "w")
                    }
                )
        obj = np.linalg.norm(unfold_mode(k - cp_reconstruct(factors), 1) @ l_mat)
        best = min(best, obj)
    return best


class TestCpAls:
    def test_exact_rank1_recovery(self):
        rng = np.random.default_rng(0)
        k = random_cp_kernel(rng, (3, 2, 2, 2), 1)
        factors, trace = cp_als(k, 1)
        assert relative_recon_error(k, cp_reconstruct(factors)) < 1e-8

    def test_full_rank_matrix_case(self):
        rng = np.random.default_rng(1)
        k = rng.standard_normal((2, 2, 1, 1))
        rank = cp_max_rank(k.shape)
        factors, _ = cp_als(k, rank)
        assert relative_recon_error(k, cp_reconstruct(factors)) < 1e-8

    def test_matrix_case_matches_svd_truncation(self):
        # a (2,2,1,1) tensor is just a matrix: rank-1 CP error equals the
        # discarded singular value
        rng = np.random.default_rng(30)
        k = rng.standard_normal((2, 2, 1, 1))
        sv = np.linalg.svd(k[:, :, 0, 0], compute_uv=False)
        _, trace = cp_als(k, 1)
        assert trace[-1] == pytest.approx(sv[1], rel=1e-8)

    def test_trace_non_increasing(self):
        rng = np.random.default_rng(2)
        k = rng.standard_normal((4, 3, 3, 3))
        _, trace = cp_als(k, 2)
        assert_trace_non_increasing(trace, slack=1e-12)

    def test_rank_bound(self):
        with pytest.raises(ValidationError):
            cp_als(np.zeros((2, 2, 1, 1)), 5)
        with pytest.raises(ValidationError):
            cp_als(np.zeros((2, 2, 1, 1)), 0)

    def test_random_init_seeded(self):
        rng = np.random.default_rng(3)
        k = rng.standard_normal((3, 2, 2, 2))
        cfg = AlsConfig(init="random", seed=7, max_sweeps=5)
        f1, t1 = cp_als(k, 2, cfg)
        f2, t2 = cp_als(k, 2, cfg)
        np.testing.assert_array_equal(f1.u_t, f2.u_t)
        assert t1 == t2


class TestTucker2Als:
    def test_full_ranks_exact(self):
        rng = np.random.default_rng(4)
        k = rng.standard_normal((3, 3, 2, 2))
        factors, _ = tucker2_als(k, 3, 3)
        assert relative_recon_error(k, tucker2_reconstruct(factors)) < 1e-10

    def test_exact_tucker2_recovery(self):
        rng = np.random.default_rng(5)
        f = Tucker2Factors(
            rng.standard_normal((2, 2, 2, 2)),
            rng.standard_normal((4, 2)),
            rng.standard_normal((4, 2)),
        )
        k = tucker2_reconstruct(f)
        factors, _ = tucker2_als(k, 2, 2)
        assert relative_recon_error(k, tucker2_reconstruct(factors)) < 1e-8

    def test_error_bounded_by_hosvd_truncation(self):
        rng = np.random.default_rng(6)
        k = rng.standard_normal((4, 4, 3, 3))
        from sigma_lowrank.decomp import _tucker2_hosvd

        hosvd_err = np.linalg.norm(k - tucker2_reconstruct(_tucker2_hosvd(k, 2, 2)))
        factors, trace = tucker2_als(k, 2, 2)
        assert trace[-1] <= hosvd_err * (1 + 1e-12)
        assert_trace_non_increasing(trace, slack=1e-12)

    def test_rank_out_of_range(self):
        with pytest.raises(ValidationError):
            tucker2_als(np.zeros((2, 2, 1, 1)), 3, 1)

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        k = rng.standard_normal((4, 3, 2, 2))
        f1, t1 = tucker2_als(k, 2, 2)
        f2, t2 = tucker2_als(k, 2, 2)
        np.testing.assert_array_equal(f1.core, f2.core)
        assert t1 == t2


class TestCpAlsSigma:
    def test_identity_root_matches_frobenius(self):
        rng = np.random.default_rng(8)
        for seed in range(3):
            k = np.random.default_rng(100 + seed).standard_normal((4, 3, 3, 3))
            dim = 27
            plain, trace_p = cp_als(k, 2)
            weighted, trace_w = cp_als_sigma(k, identity_root(dim), 2, AlsConfig(init="hosvd"))
            assert abs(trace_p[-1] - trace_w[-1]) <= 1e-6 * trace_p[-1]

    def test_tiny_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(9)
        k = rng.standard_normal((2, 2, 1, 1))
        sigma = np.diag([4.0, 0.25])
        root = sigma_root_from_matrix(sigma, NO_RIDGE)
        best_oracle = oracle_cp_als(k, root.l, 1, np.random.default_rng(10))
        factors, trace = cp_als_sigma(k, root, 1)
        assert abs(trace[-1] - best_oracle) <= 1e-6 * best_oracle

    def test_every_update_matches_dense_oracle(self):
        rng = np.random.default_rng(11)
        for trial in range(6):
            dims = (3, 2, 2, 2)
            rank = 2
            k = rng.standard_normal(dims)
            root = random_root(rng, dims)
            factors = CpFactors(*(rng.standard_normal((d, rank)) for d in dims))
            for mode in ("t", "s", "h", "w"):
                updated = cp_sigma_factor_update(k, factors, root, mode)
                p, y = dense_p_cp(k, factors, root.l, mode)
                expected = oracle_factor_solution(p, y)
                mode_dim = getattr(factors, f"u_{mode}").shape[0]
                expected_mat = expected.reshape(rank, mode_dim).T
                got = getattr(updated, f"u_{mode}")
                scale = max(1.0, np.abs(expected_mat).max())
                assert np.abs(got - expected_mat).max() <= 1e-8 * scale, (trial, mode)
                factors = updated

    def test_per_update_monotone(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            dims = (4, 3, 3, 3)
            k = rng.standard_normal(dims)
            root = random_root(rng, dims)
            _, trace = cp_als_sigma(k, root, 2, AlsConfig(max_sweeps=6))
            assert_trace_non_increasing(trace)

    def test_root_dim_mismatch(self):
        with pytest.raises(ValidationError):
            cp_als_sigma(np.zeros((2, 2, 2, 2)), identity_root(7), 1)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(13)
        dims = (3, 2, 2, 2)
        k = rng.standard_normal(dims)
        sigma = random_spd(rng, 8)
        c = 9.0
        root1 = sigma_root_from_matrix(sigma, NO_RIDGE)
        rootc = sigma_root_from_matrix(c * sigma, NO_RIDGE)
        f1, t1 = cp_als_sigma(k, root1, 2)
        fc, tc = cp_als_sigma(k, rootc, 2)
        assert tc[-1] == pytest.approx(np.sqrt(c) * t1[-1], rel=1e-6)
        np.testing.assert_allclose(
            cp_reconstruct(fc), cp_reconstruct(f1), atol=1e-6 * np.abs(k).max()
        )


class TestTucker2AlsSigma:
    def test_identity_root_matches_frobenius(self):
        for seed in range(3):
            k = np.random.default_rng(200 + seed).standard_normal((4, 4, 3, 3))
            plain, trace_p = tucker2_als(k, 2, 2)
            weighted, trace_w = tucker2_als_sigma(
                k, identity_root(36), 2, 2, AlsConfig(init="hosvd")
            )
            assert abs(trace_p[-1] - trace_w[-1]) <= 1e-6 * trace_p[-1]

    def test_full_ranks_exact_any_root(self):
        rng = np.random.default_rng(14)
        dims = (3, 2, 2, 2)
        k = rng.standard_normal(dims)
        root = random_root(rng, dims)
        factors, trace = tucker2_als_sigma(k, root, 3, 2)
        assert relative_recon_error(k, tucker2_reconstruct(factors)) < 1e-8

    def test_tiny_matches_dense_oracle_objective(self):
        rng = np.random.default_rng(15)
        dims = (3, 2, 2, 2)
        k = rng.standard_normal(dims)
        root = random_root(rng, dims)

        factors = Tucker2Factors(
            rng.standard_normal((2, 1, 2, 2)),
            rng.standard_normal((3, 2)),
            rng.standard_normal((2, 1)),
        )
        for _ in range(60):
            for which in ("t", "s", "g"):
                p, y = dense_p_tucker2(k, factors, root.l, which)
                x = oracle_factor_solution(p, y)
                if which == "t":
                    factors = Tucker2Factors(factors.core, x.reshape(2, 3).T, factors.u_s)
                elif which == "s":
                    factors = Tucker2Factors(factors.core, factors.u_t, x.reshape(1, 2).T)
                else:
                    factors = Tucker2Factors(x.reshape(2, 1, 2, 2), factors.u_t, factors.u_s)
        oracle_obj = sigma_objective(k, factors, root)

        got, trace = tucker2_als_sigma(k, root, 2, 1)
        assert abs(trace[-1] - oracle_obj) <= 1e-6 * max(oracle_obj, 1e-12)

    def test_updates_match_dense_oracle(self):
        rng = np.random.default_rng(16)
        for trial in range(4):
            dims = (3, 3, 2, 2)
            k = rng.standard_normal(dims)
            root = random_root(rng, dims)
            factors = Tucker2Factors(
                rng.standard_normal((2, 2, 2, 2)),
                rng.standard_normal((3, 2)),
                rng.standard_normal((3, 2)),
            )
            for which in ("t", "s", "g"):
                updated = tucker2_sigma_factor_update(k, factors, root, which)
                p, y = dense_p_tucker2(k, factors, root.l, which)
                expected = oracle_factor_solution(p, y)
                if which == "t":
                    got, exp_mat = updated.u_t, expected.reshape(2, 3).T
                elif which == "s":
                    got, exp_mat = updated.u_s, expected.reshape(2, 3).T
                else:
                    got, exp_mat = updated.core, expected.reshape(2, 2, 2, 2)
                scale = max(1.0, np.abs(exp_mat).max())
                assert np.abs(got - exp_mat).max() <= 1e-8 * scale, (trial, which)
                factors = updated

    def test_per_update_monotone(self):
        rng = np.random.default_rng(17)
        for _ in range(6):
            dims = (4, 3, 3, 3)
            k = rng.standard_normal(dims)
            root = random_root(rng, dims)
            _, trace = tucker2_als_sigma(k, root, 2, 2, AlsConfig(max_sweeps=6))
            assert_trace_non_increasing(trace)


class TestGreedyDeflation:
    def test_exact_rank1(self):
        rng = np.random.default_rng(18)
        dims = (3, 2, 2, 2)
        k = random_cp_kernel(rng, dims, 1)
        root = random_root(rng, dims)
        factors, trace = greedy_deflation_sigma(k, root, 3)
        assert trace[1] < 1e-8 * trace[0]
        tail = CpFactors(*(m[:, 1:] for m in factors.factors))
        assert np.linalg.norm(cp_reconstruct(tail)) < 1e-6 * np.linalg.norm(k)

    def test_rank1_coincides_with_joint_fit(self):
        rng = np.random.default_rng(19)
        dims = (3, 2, 2, 2)
        k = rng.standard_normal(dims)
        root = random_root(rng, dims)
        cfg = AlsConfig()
        joint, _ = cp_als_sigma(k, root, 1, cfg)
        greedy, _ = greedy_deflation_sigma(k, root, 1, cfg)
        np.testing.assert_array_equal(joint.u_t, greedy.u_t)
        np.testing.assert_array_equal(joint.u_w, greedy.u_w)

    def test_residual_trace_non_increasing_and_dominated(self):
        rng = np.random.default_rng(20)
        dims = (4, 3, 3, 3)
        for seed in (0, 1):
            local = np.random.default_rng(300 + seed)
            k = local.standard_normal(dims)
            root = random_root(local, dims, cond=200.0)
            joint, jtrace = cp_als_sigma(k, root, 3)
            greedy, gtrace = greedy_deflation_sigma(k, root, 3)
            assert_trace_non_increasing(gtrace)
            assert jtrace[-1] <= gtrace[-1] * (1 + 1e-8)


class TestSvdSigma:
    def test_identity_root_is_truncated_svd(self):
        rng = np.random.default_rng(21)
        w = rng.standard_normal((6, 8))
        got = svd_sigma(w, identity_root(8), 2)
        u, s, v = truncated_svd(w, 2)
        np.testing.assert_allclose(got.reconstruct(), u @ np.diag(s) @ v.T, atol=1e-10)

    def test_full_rank_exact(self):
        rng = np.random.default_rng(22)
        w = rng.standard_normal((5, 7))
        root = sigma_root_from_matrix(random_spd(rng, 7), NO_RIDGE)
        got = svd_sigma(w, root, 5)
        assert np.abs(got.reconstruct() - w).max() < 1e-10

    def test_beats_plain_svd_in_weighted_norm(self):
        rng = np.random.default_rng(23)
        for _ in range(5):
            w = rng.standard_normal((6, 8))
            root = sigma_root_from_matrix(random_spd(rng, 8, cond=50.0), NO_RIDGE)
            ours = svd_sigma(w, root, 2).reconstruct()
            u, s, v = truncated_svd(w, 2)
            plain = u @ np.diag(s) @ v.T
            obj_ours = np.linalg.norm((w - ours) @ root.l)
            obj_plain = np.linalg.norm((w - plain) @ root.l)
            assert obj_ours <= obj_plain * (1 + 1e-12)

    def test_beats_random_candidates(self):
        rng = np.random.default_rng(24)
        w = rng.standard_normal((5, 5))
        root = sigma_root_from_matrix(random_spd(rng, 5, cond=30.0), NO_RIDGE)
        ours = np.linalg.norm((w - svd_sigma(w, root, 2).reconstruct()) @ root.l)
        for _ in range(300):
            a = rng.standard_normal((5, 2))
            b = rng.standard_normal((2, 5))
            cand = np.linalg.norm((w - a @ b) @ root.l)
            assert ours <= cand + 1e-12

    def test_rank_validation(self):
        with pytest.raises(ValidationError):
            svd_sigma(np.zeros((3, 4)), identity_root(4), 4)

    def test_singular_root_rejected(self):
        from sigma_lowrank import SingularRootError

        rng = np.random.default_rng(28)
        w = rng.standard_normal((3, 4))
        v = np.ones((4, 1))
        root = sigma_root_from_matrix(v @ v.T, NO_RIDGE)  # rank-1, no ridge
        with pytest.raises(SingularRootError, match="epsilon"):
            svd_sigma(w, root, 2)


class TestWalsTucker2:
    def test_uniform_weights_match_plain(self):
        rng = np.random.default_rng(25)
        k = rng.standard_normal((4, 3, 3, 3))
        plain, ptrace = tucker2_als(k, 2, 2)
        weighted, wtrace = wals_tucker2(k, np.full(k.shape, 3.0), 2, 2)
        assert wtrace[-1] / 3.0 == pytest.approx(ptrace[-1], rel=1e-6)

    def test_single_slab_full_ranks(self):
        rng = np.random.default_rng(26)
        k = rng.standard_normal((3, 3, 2, 2))
        weights = np.zeros_like(k)
        weights[1, 2] = 1.0
        factors, trace = wals_tucker2(k, weights, 3, 3)
        assert trace[-1] < 1e-8

    def test_weighted_trace_non_increasing(self):
        rng = np.random.default_rng(27)
        for _ in range(4):
            k = rng.standard_normal((4, 3, 2, 2))
            weights = rng.uniform(0.0, 2.0, size=k.shape)
            _, trace = wals_tucker2(k, weights, 2, 2)
            assert_trace_non_increasing(trace)

    def test_weight_validation(self):
        k = np.ones((2, 2, 1, 1))
        with pytest.raises(ValidationError):
            wals_tucker2(k, -np.ones_like(k), 1, 1)
        with pytest.raises(ValidationError):
            wals_tucker2(k, np.zeros_like(k), 1, 1)
        with pytest.raises(ValidationError):
            wals_tucker2(k, np.ones((2, 2, 1, 2)), 1, 1)
