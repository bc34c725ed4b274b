import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigma_lowrank import (
    ConvSpec,
    SymSolveConfig,
    ValidationError,
    conv_direct,
    estimate_sigma,
    identity_root,
    im2col,
    relative_recon_error,
    sigma_norm,
    sigma_root_from_matrix,
)
from sigma_lowrank.covariance import SigmaAccumulator

NO_RIDGE = SymSolveConfig(epsilon_scale=0.0)


def empirical_output_rms(k, k_tilde, images, spec):
    """Per-position RMS output discrepancy, computed through direct convs."""
    total = 0.0
    positions = None
    for x in images:
        diff = conv_direct(k, x, spec) - conv_direct(k_tilde, x, spec)
        positions = diff.shape[1] * diff.shape[2]
        total += float(np.sum(diff**2))
    return np.sqrt(total / (len(images) * positions))


class TestAccumulator:
    def test_single_basis_column(self):
        e1 = np.zeros((4, 1))
        e1[0, 0] = 1.0
        acc = estimate_sigma([e1])
        assert acc.count == 1
        np.testing.assert_array_equal(acc.finalize("mean"), np.outer(e1, e1))

    def test_identity_columns(self):
        acc = estimate_sigma([np.eye(5)])
        np.testing.assert_allclose(acc.finalize("mean"), np.eye(5) / 5, atol=1e-15)

    def test_split_merge_equals_single_pass(self):
        rng = np.random.default_rng(0)
        patches = rng.standard_normal((6, 40))
        sequential = estimate_sigma([patches[:, :17], patches[:, 17:]])
        left = SigmaAccumulator(6).add(patches[:, :17])
        right = SigmaAccumulator(6).add(patches[:, 17:])
        merged = left.merge(right)
        assert merged.count == sequential.count
        # merge performs the same additions as the sequential pass
        np.testing.assert_array_equal(merged.sum_matrix, sequential.sum_matrix)
        # a one-shot product reassociates the sums, so only near-exact
        one_shot = estimate_sigma([patches])
        np.testing.assert_allclose(
            merged.sum_matrix, one_shot.sum_matrix, rtol=0, atol=1e-12 * 40
        )

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**16), split=st.integers(1, 19))
    def test_merge_commutes(self, seed, split):
        rng = np.random.default_rng(seed)
        patches = rng.standard_normal((4, 20))
        a = SigmaAccumulator(4).add(patches[:, :split])
        b = SigmaAccumulator(4).add(patches[:, split:])
        ab = SigmaAccumulator(4).merge(a).merge(b)
        ba = SigmaAccumulator(4).merge(b).merge(a)
        assert ab.count == ba.count
        np.testing.assert_allclose(ab.sum_matrix, ba.sum_matrix, atol=1e-12)

    def test_row_mismatch(self):
        acc = SigmaAccumulator(4)
        with pytest.raises(ValidationError):
            acc.add(np.zeros((5, 2)))
        with pytest.raises(ValidationError):
            acc.merge(SigmaAccumulator(5))

    def test_sum_normalization_and_empty(self):
        rng = np.random.default_rng(1)
        p = rng.standard_normal((3, 7))
        acc = estimate_sigma([p], normalization="sum")
        np.testing.assert_allclose(acc.finalize("sum"), p @ p.T, atol=1e-12)
        with pytest.raises(ValidationError):
            estimate_sigma([])
        with pytest.raises(ValidationError):
            SigmaAccumulator(3).finalize("mean")

    def test_psd_before_regularization(self):
        rng = np.random.default_rng(2)
        sigma = estimate_sigma([rng.standard_normal((6, 50))]).finalize("mean")
        eigs = np.linalg.eigvalsh(sigma)
        assert eigs.min() >= -1e-10 * np.linalg.norm(sigma)


class TestSigmaRoot:
    def test_defining_identity(self):
        rng = np.random.default_rng(3)
        sigma = estimate_sigma([rng.standard_normal((5, 60))]).finalize("mean")
        root = sigma_root_from_matrix(sigma, SymSolveConfig())
        eps = root.epsilon
        target = sigma + eps * np.eye(5)
        assert np.linalg.norm(root.l @ root.l.T - target) / np.linalg.norm(sigma) < 1e-10
        assert root.lower_triangular

    def test_fallback_to_eigen_root_on_singular(self):
        v = np.ones((4, 1))
        sigma = v @ v.T  # rank one
        root = sigma_root_from_matrix(sigma, NO_RIDGE)
        assert not root.lower_triangular
        np.testing.assert_allclose(root.l @ root.l.T, sigma, atol=1e-10)


class TestSigmaNorm:
    def test_zero_for_equal_kernels(self):
        rng = np.random.default_rng(4)
        k = rng.standard_normal((2, 2, 2, 2))
        assert sigma_norm(k, k, identity_root(8)) == 0.0

    def test_identity_root_is_frobenius(self):
        rng = np.random.default_rng(5)
        k = rng.standard_normal((3, 2, 2, 2))
        k2 = rng.standard_normal((3, 2, 2, 2))
        assert sigma_norm(k, k2, identity_root(8)) == pytest.approx(
            np.linalg.norm(k - k2), abs=1e-14
        )

    def test_functional_norm_identity(self):
        rng = np.random.default_rng(6)
        k = rng.standard_normal((3, 2, 3, 3))
        k_tilde = rng.standard_normal((3, 2, 3, 3))
        spec = ConvSpec(k.shape)
        images = [rng.standard_normal((2, 8, 8)) for _ in range(200)]
        acc = estimate_sigma([im2col(x, spec) for x in images])
        root = sigma_root_from_matrix(acc.finalize("mean"), NO_RIDGE)
        lhs = sigma_norm(k, k_tilde, root)
        rhs = empirical_output_rms(k, k_tilde, images, spec)
        assert abs(lhs - rhs) / rhs < 1e-6

    def test_dim_mismatch(self):
        k = np.zeros((2, 2, 2, 2))
        with pytest.raises(ValidationError):
            sigma_norm(k, np.zeros((2, 2, 2, 1)), identity_root(8))
        with pytest.raises(ValidationError):
            sigma_norm(k, k, identity_root(7))


class TestRelativeError:
    def test_endpoints(self):
        rng = np.random.default_rng(7)
        k = rng.standard_normal((2, 2, 2, 2))
        assert relative_recon_error(k, k) == 0.0
        assert relative_recon_error(k, np.zeros_like(k)) == pytest.approx(1.0)
        root = identity_root(8)
        assert relative_recon_error(k, k, root) == 0.0
        assert relative_recon_error(k, np.zeros_like(k), root) == pytest.approx(1.0)

    def test_zero_kernel_rejected(self):
        with pytest.raises(ValidationError):
            relative_recon_error(np.zeros((2, 2, 1, 1)), np.zeros((2, 2, 1, 1)))
