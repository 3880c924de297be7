#!/usr/bin/env python3
"""
Unit tests for the dense SPD matrix helpers

Tests cover:
- Construction checks (shape, symmetry, finiteness)
- Cholesky factorization, caching and failure on indefinite input
- Gaussian sampling, solves, inverses, log-determinants
- Empirical covariance of zero-mean momenta and the ridge
"""

import numpy as np
import numpy.testing as npt
import pytest

from sampling.errors import InsufficientSamples, NotPositiveDefinite
from sampling.spd_linalg import (SpdMatrix, blend, cholesky, clip_condition,
                                 condition_number, empirical_covariance, log_det,
                                 quad_form, sample_zero_mean_gaussian, solve_spd,
                                 spd_inverse)


class TestSpdMatrixConstruction:
    """Test SpdMatrix value checks"""

    def test_identity_and_diag(self):
        """Test the identity and diagonal constructors"""
        npt.assert_array_equal(SpdMatrix.identity(3).entries, np.eye(3))
        npt.assert_array_equal(SpdMatrix.diag([1.0, 2.0]).entries, [[1.0, 0.0], [0.0, 2.0]])

    def test_non_square_rejected(self):
        """Test that a non-square matrix raises ValueError"""
        with pytest.raises(ValueError):
            SpdMatrix(np.ones((2, 3)))

    def test_asymmetric_rejected(self):
        """Test that an asymmetric matrix is not accepted"""
        with pytest.raises(NotPositiveDefinite) as exc_info:
            SpdMatrix([[1.0, 0.5], [0.0, 1.0]])
        assert "max_asymmetry" in str(exc_info.value)

    def test_non_finite_rejected(self):
        """Test that NaN entries are rejected"""
        with pytest.raises(NotPositiveDefinite):
            SpdMatrix([[np.nan, 0.0], [0.0, 1.0]])

    def test_entries_are_read_only(self):
        """Test that the stored entries cannot be mutated"""
        m = SpdMatrix.identity(2)
        with pytest.raises(ValueError):
            m.entries[0, 0] = 5.0

    def test_source_array_not_aliased(self):
        """Test that mutating the input array leaves the matrix unchanged"""
        source = np.eye(2)
        m = SpdMatrix(source)
        source[0, 0] = 7.0
        assert m.entries[0, 0] == 1.0


class TestCholesky:
    """Test factorization and its cache"""

    def test_factor_reconstructs_matrix(self):
        """Test that L @ L.T reproduces the matrix"""
        m = SpdMatrix([[4.0, 2.0], [2.0, 3.0]])
        factor = cholesky(m)
        npt.assert_allclose(factor @ factor.T, m.entries, atol=1e-12)
        assert np.allclose(factor, np.tril(factor))

    def test_factor_cached(self):
        """Test that the factor is computed once"""
        m = SpdMatrix([[4.0, 2.0], [2.0, 3.0]])
        assert cholesky(m) is cholesky(m)

    def test_indefinite_raises(self):
        """Test that an indefinite matrix raises NotPositiveDefinite"""
        with pytest.raises(NotPositiveDefinite):
            cholesky(SpdMatrix([[1.0, 2.0], [2.0, 1.0]]))

    def test_singular_raises(self):
        """Test that a singular matrix raises NotPositiveDefinite"""
        with pytest.raises(NotPositiveDefinite):
            cholesky(SpdMatrix([[1.0, 1.0], [1.0, 1.0]]))


class TestSolvesAndInverse:
    """Test linear solves, inverses, quadratic forms and log-determinants"""

    def test_solve_matches_numpy(self):
        """Test solve_spd against numpy.linalg.solve"""
        entries = np.array([[3.0, 1.0, 0.2], [1.0, 2.0, 0.5], [0.2, 0.5, 1.5]])
        v = np.array([1.0, -2.0, 0.5])
        npt.assert_allclose(solve_spd(SpdMatrix(entries), v), np.linalg.solve(entries, v))

    def test_solve_rejects_wrong_length(self):
        """Test that a mismatched vector raises ValueError"""
        with pytest.raises(ValueError):
            solve_spd(SpdMatrix.identity(2), np.ones(3))

    def test_inverse_is_spd_and_cached(self):
        """Test spd_inverse returns a cached symmetric inverse"""
        m = SpdMatrix([[2.0, 0.5], [0.5, 1.0]])
        inv = spd_inverse(m)
        npt.assert_allclose(inv.entries @ m.entries, np.eye(2), atol=1e-12)
        npt.assert_array_equal(inv.entries, inv.entries.T)
        assert spd_inverse(m) is inv

    def test_quad_form_and_log_det(self):
        """Test quad_form and log_det by hand arithmetic"""
        m = SpdMatrix.diag([2.0, 3.0])
        assert quad_form(m, np.array([1.0, 2.0])) == pytest.approx(14.0)
        assert log_det(m) == pytest.approx(np.log(6.0))

    def test_log_det_identity_is_zero(self):
        """Test that the identity has zero log-determinant"""
        assert log_det(SpdMatrix.identity(4)) == pytest.approx(0.0, abs=1e-15)


class TestGaussianSampling:
    """Test zero-mean Gaussian draws through the Cholesky factor"""

    def test_sample_covariance_matches(self):
        """Test that 20000 draws reproduce the covariance"""
        cov = SpdMatrix([[2.0, 0.5], [0.5, 1.0]])
        rng = np.random.default_rng(3)
        draws = np.array([sample_zero_mean_gaussian(cov, rng) for _ in range(20000)])
        npt.assert_allclose(draws.T @ draws / len(draws), cov.entries, atol=0.08)

    def test_deterministic_given_seed(self):
        """Test that equal seeds give equal draws"""
        cov = SpdMatrix([[2.0, 0.5], [0.5, 1.0]])
        a = sample_zero_mean_gaussian(cov, np.random.default_rng(11))
        b = sample_zero_mean_gaussian(cov, np.random.default_rng(11))
        npt.assert_array_equal(a, b)


class TestBlend:
    """Test convex blending of SPD matrices"""

    def test_kappa_one_replaces(self):
        """Test that kappa = 1 returns the second matrix"""
        a, b = SpdMatrix.identity(2), SpdMatrix([[2.0, 0.3], [0.3, 1.0]])
        npt.assert_allclose(blend(a, b, 1.0).entries, b.entries)

    def test_midpoint(self):
        """Test the kappa = 0.5 midpoint"""
        a, b = SpdMatrix.diag([1.0, 1.0]), SpdMatrix.diag([3.0, 5.0])
        npt.assert_allclose(blend(a, b, 0.5).entries, np.diag([2.0, 3.0]))

    @pytest.mark.parametrize("kappa", [0.0, -0.1, 1.5])
    def test_kappa_out_of_range(self, kappa):
        """Test that kappa outside (0, 1] raises ValueError"""
        with pytest.raises(ValueError):
            blend(SpdMatrix.identity(2), SpdMatrix.identity(2), kappa)


class TestEmpiricalCovariance:
    """Test the zero-mean momentum covariance estimate"""

    def test_no_mean_subtracted(self):
        """Test that samples {1, 1} give second moment 1, not variance 0"""
        cov = empirical_covariance([[1.0], [1.0]], ridge=0.0)
        npt.assert_allclose(cov.entries, [[1.0]])

    def test_scalar_samples(self):
        """Test that a flat list is read as scalar momenta"""
        cov = empirical_covariance([1.0, -3.0], ridge=0.0)
        npt.assert_allclose(cov.entries, [[5.0]])

    def test_explicit_ridge_added(self):
        """Test that the ridge lands on the diagonal"""
        cov = empirical_covariance([[1.0, 0.0], [0.0, 1.0]], ridge=0.25)
        npt.assert_allclose(cov.entries, np.diag([0.75, 0.75]))

    def test_default_ridge_scale(self):
        """Test the default ridge of 1e-6 times the mean diagonal"""
        cov = empirical_covariance([[2.0, 0.0], [0.0, 2.0]])
        npt.assert_allclose(cov.entries, np.diag([2.0, 2.0]) + 2e-6 * np.eye(2))

    def test_rank_deficient_made_definite_by_ridge(self):
        """Test that a rank-one estimate factors once ridged"""
        cov = empirical_covariance([[1.0, 1.0], [2.0, 2.0], [-1.0, -1.0]])
        cholesky(cov)

    def test_too_few_samples(self):
        """Test that one sample raises InsufficientSamples"""
        with pytest.raises(InsufficientSamples):
            empirical_covariance([[1.0, 2.0]])

    def test_negative_ridge(self):
        """Test that a negative ridge raises ValueError"""
        with pytest.raises(ValueError):
            empirical_covariance([[1.0], [2.0]], ridge=-1.0)

    def test_permutation_invariant(self):
        """Test that reordering the samples leaves the estimate unchanged"""
        samples = np.random.default_rng(8).standard_normal((50, 3))
        order = np.random.default_rng(9).permutation(50)
        npt.assert_allclose(empirical_covariance(samples[order]).entries,
                            empirical_covariance(samples).entries, rtol=1e-12)


class TestClipCondition:
    """Test eigenvalue flooring against a condition-number bound"""

    def test_within_bound_returned_unchanged(self):
        """Test that a well-conditioned matrix comes back as the same object"""
        m = SpdMatrix.diag([1.0, 4.0])
        assert clip_condition(m, 10.0) is m
        assert clip_condition(m, None) is m

    def test_small_eigenvalue_floored(self):
        """Test that diag(1e-6, 1) clipped at 100 becomes diag(0.01, 1)"""
        clipped = clip_condition(SpdMatrix.diag([1e-6, 1.0]), 100.0)
        npt.assert_allclose(clipped.entries, np.diag([0.01, 1.0]), atol=1e-15)

    def test_eigenvectors_kept(self):
        """Test that a rotated ill-conditioned matrix keeps its principal axes"""
        c, s = np.cos(0.3), np.sin(0.3)
        rotation = np.array([[c, -s], [s, c]])
        m = SpdMatrix(rotation @ np.diag([1e-8, 50.0]) @ rotation.T)
        clipped = clip_condition(m, 20.0)
        npt.assert_allclose(clipped.entries, rotation @ np.diag([2.5, 50.0]) @ rotation.T,
                            rtol=1e-10, atol=1e-10)
        assert condition_number(clipped) == pytest.approx(20.0)

    def test_bound_below_one(self):
        """Test that max_condition < 1 raises ValueError"""
        with pytest.raises(ValueError):
            clip_condition(SpdMatrix.identity(2), 0.5)

    def test_condition_number(self):
        """Test the eigenvalue ratio"""
        assert condition_number(SpdMatrix.diag([0.5, 2.0, 1.0])) == pytest.approx(4.0)
