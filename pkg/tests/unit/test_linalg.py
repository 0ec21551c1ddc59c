"""Tests for dense linear algebra kernels."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.errors import CapacityError, ShapeError
from src.experiments.equivalence import conditioned_matrix
from src.memory.linalg import (
    QUINTIC_NS,
    matmul,
    matrix_rank,
    newton_schulz,
    pinv,
    polar_factor,
    self_tensor,
    svd_oracle,
)


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


class TestMatmul:
    """Test validated matrix products."""

    def test_identity(self, rng):
        """Identity on the left returns the operand."""
        a = rng.standard_normal((3, 4))
        assert np.array_equal(matmul(np.eye(3), a), a)

    def test_hand_checked_product(self):
        """Small product computed by hand."""
        out = matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [1.0]])
        assert np.array_equal(out, np.array([[2.0], [4.0]]))

    def test_matches_naive_loop(self, rng):
        """Random 8x8 product agrees with a triple loop."""
        a = rng.standard_normal((8, 8))
        b = rng.standard_normal((8, 8))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) <= 1e-12

    def test_dimension_mismatch(self):
        """Inner dimensions must agree."""
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_rejects_non_finite(self):
        """NaN operands are refused."""
        with pytest.raises(ValueError):
            matmul(np.array([[np.nan]]), np.ones((1, 1)))

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=10_000))
    def test_associativity(self, seed):
        """(AB)C equals A(BC) to rounding."""
        g = np.random.default_rng(seed)
        a, b, c = (g.standard_normal((5, 5)) for _ in range(3))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert np.linalg.norm(left - right) <= 1e-9 * np.linalg.norm(left)


class TestSelfTensor:
    """Test Kronecker self-tensoring."""

    def test_power_zero(self):
        """p=0 gives the one-entry vector [1]."""
        assert np.array_equal(self_tensor([3.0, 4.0], 0), np.array([1.0]))

    def test_power_one(self):
        """p=1 returns the input."""
        assert np.array_equal(self_tensor([3.0, 4.0], 1), np.array([3.0, 4.0]))

    def test_power_two(self):
        """Second power lists all pairwise products."""
        assert np.array_equal(self_tensor([1.0, 2.0], 2), np.array([1.0, 2.0, 2.0, 4.0]))

    @given(d=st.integers(min_value=1, max_value=4), p=st.integers(min_value=0, max_value=4))
    def test_dimension(self, d, p):
        """Output length is d**p."""
        assert self_tensor(np.ones(d), p).shape == (d ** p,)

    def test_norm_is_power(self, rng):
        """||x^(p)|| = ||x||^p."""
        x = rng.standard_normal(3)
        assert np.isclose(np.linalg.norm(self_tensor(x, 3)), np.linalg.norm(x) ** 3, rtol=1e-12)

    def test_negative_power(self):
        """Negative powers are rejected."""
        with pytest.raises(ValueError):
            self_tensor([1.0], -1)


class TestNewtonSchulz:
    """Test Newton-Schulz orthogonalisation."""

    def test_rotation_stays_orthogonal(self):
        """A rotation converges back to an orthogonal matrix."""
        t = 0.3
        rot = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
        out = newton_schulz(rot, 10)
        assert np.linalg.norm(out.T @ out - np.eye(2)) <= 1e-9
        assert np.max(np.abs(out - rot)) <= 1e-9

    def test_diagonal_goes_to_identity(self):
        """diag(3, 0.5) maps to the identity."""
        out = newton_schulz(np.diag([3.0, 0.5]), 20)
        assert np.max(np.abs(out - np.eye(2))) <= 1e-6

    def test_matches_polar_factor(self, rng):
        """Random full-rank 6x4 agrees with U V^T from the SVD oracle."""
        s = conditioned_matrix(rng, 6, 4)
        assert np.linalg.norm(newton_schulz(s, 20) - polar_factor(s)) <= 1e-5

    @pytest.mark.parametrize("shape", [(3, 3), (5, 2), (2, 7), (8, 8)])
    def test_singular_values_near_one(self, rng, shape):
        """k=20 output is semi-orthogonal."""
        out = newton_schulz(conditioned_matrix(rng, *shape), 20)
        _, sigma, _ = svd_oracle(out)
        assert np.max(np.abs(sigma - 1.0)) <= 1e-5

    @settings(max_examples=20, deadline=None)
    @given(scale=st.floats(min_value=1e-3, max_value=1e3))
    def test_scale_invariance(self, scale):
        """NS(c S) = NS(S) for c > 0."""
        s = conditioned_matrix(np.random.default_rng(7), 4, 4)
        assert np.max(np.abs(newton_schulz(scale * s, 5) - newton_schulz(s, 5))) <= 1e-12

    def test_zero_input(self):
        """Zero matrices stay zero."""
        assert np.array_equal(newton_schulz(np.zeros((3, 2)), 5), np.zeros((3, 2)))

    def test_step_count_validated(self):
        """k must be at least one."""
        with pytest.raises(ValueError):
            newton_schulz(np.eye(2), 0)

    def test_quintic_coefficients(self, rng):
        """The quintic variant keeps singular values in a band around one."""
        out = newton_schulz(conditioned_matrix(rng, 5, 5), 5, coeffs=QUINTIC_NS)
        _, sigma, _ = svd_oracle(out)
        assert np.all(sigma > 0.5) and np.all(sigma < 1.5)


class TestSvdOracle:
    """Test the one-sided Jacobi SVD."""

    @pytest.mark.parametrize("shape", [(5, 3), (3, 5), (4, 4), (1, 3)])
    def test_reconstruction(self, rng, shape):
        """U diag(sigma) Vt reconstructs the input."""
        a = rng.standard_normal(shape)
        u, sigma, vt = svd_oracle(a)
        assert np.linalg.norm(u @ np.diag(sigma) @ vt - a) <= 1e-10 * np.linalg.norm(a)

    def test_singular_values_sorted(self, rng):
        """Singular values are non-negative, descending and match numpy."""
        a = rng.standard_normal((6, 4))
        _, sigma, _ = svd_oracle(a)
        assert np.all(sigma >= 0.0)
        assert np.all(np.diff(sigma) <= 0.0)
        assert np.allclose(sigma, np.linalg.svd(a, compute_uv=False), atol=1e-10)

    def test_orthonormal_factors(self, rng):
        """U has orthonormal columns and Vt orthonormal rows."""
        u, _, vt = svd_oracle(rng.standard_normal((7, 3)))
        assert np.allclose(u.T @ u, np.eye(3), atol=1e-10)
        assert np.allclose(vt @ vt.T, np.eye(3), atol=1e-10)

    def test_size_guard(self):
        """Matrices beyond the oracle's size are refused."""
        with pytest.raises(CapacityError):
            svd_oracle(np.ones((65, 65)))


class TestDerivedFactorisations:
    """Test rank, pseudoinverse and polar factor."""

    def test_rank_deficient(self, rng):
        """Rank of a product of thin factors."""
        a = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
        assert matrix_rank(a) == 2

    def test_rank_of_zero(self):
        """Zero matrix has rank zero."""
        assert matrix_rank(np.zeros((3, 3))) == 0

    def test_pinv_matches_numpy(self, rng):
        """Pseudoinverse agrees with numpy's."""
        a = rng.standard_normal((5, 3))
        assert np.allclose(pinv(a), np.linalg.pinv(a), atol=1e-10)

    def test_polar_factor_orthogonal(self, rng):
        """Polar factor of a square matrix is orthogonal."""
        q = polar_factor(rng.standard_normal((4, 4)))
        assert np.allclose(q.T @ q, np.eye(4), atol=1e-10)
