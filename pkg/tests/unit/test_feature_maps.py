"""Tests for polynomial and exponential feature maps."""

import math
from unittest.mock import patch

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from src.core.errors import CapacityError
from src.memory.feature_maps import (
    FeatureMapSpec,
    apply_batch,
    apply_poly,
    exp_coeffs,
    init_taylor_coeffs,
    kernel_dot,
    lifted_dim,
    monomial_dim,
)
from src.memory.linalg import matrix_rank


def unit(rng, d):
    x = rng.standard_normal(d)
    return x / np.linalg.norm(x)


class TestFeatureMapSpec:
    """Test feature map construction and validation."""

    def test_identity_default(self):
        """Default spec is the identity."""
        spec = FeatureMapSpec()
        assert spec.kind == "identity"
        assert spec.coeffs == (0.0, 1.0)

    def test_taylor_initialisation(self):
        """Polynomial coefficients default to 1/i!."""
        spec = FeatureMapSpec.polynomial(3)
        assert spec.coeffs == init_taylor_coeffs(3)
        assert spec.coeffs[3] == pytest.approx(1.0 / 6.0)

    def test_exp_coefficients(self):
        """Exponential map squares its coefficients to 1/i!."""
        spec = FeatureMapSpec.exp_truncated(4)
        assert [a * a for a in spec.coeffs] == pytest.approx(
            [1.0 / math.factorial(i) for i in range(5)]
        )
        assert spec.normalize_input is True

    def test_coefficient_count(self):
        """degree + 1 coefficients are required."""
        with pytest.raises(ValidationError):
            FeatureMapSpec(kind="polynomial", degree=2, coeffs=(1.0, 1.0))

    def test_identity_is_fixed(self):
        """Identity cannot carry a higher degree."""
        with pytest.raises(ValidationError):
            FeatureMapSpec(kind="identity", degree=2, coeffs=(0.0, 1.0, 1.0))

    def test_exp_coefficients_fixed(self):
        """Custom coefficients on the exponential map are refused."""
        with pytest.raises(ValidationError):
            FeatureMapSpec(kind="exp_truncated", degree=1, coeffs=(1.0, 2.0))

    def test_negative_degree(self):
        """Degree must be non-negative."""
        with pytest.raises(ValidationError):
            FeatureMapSpec(kind="polynomial", degree=-1, coeffs=())
        with pytest.raises(ValueError):
            exp_coeffs(-1)

    def test_frozen(self):
        """Specs are immutable."""
        spec = FeatureMapSpec.polynomial(2)
        with pytest.raises(ValidationError):
            spec.degree = 3


class TestApplyPoly:
    """Test lifting vectors."""

    def test_identity_copies(self):
        """Identity returns an equal, independent array."""
        x = np.array([1.0, 2.0])
        out = apply_poly(FeatureMapSpec.identity(), x)
        out[0] = 5.0
        assert x[0] == 1.0

    def test_stacked_layout(self):
        """Stacked map concatenates a_i x^(i)."""
        spec = FeatureMapSpec.polynomial(2, coeffs=(1.0, 2.0, 3.0))
        out = apply_poly(spec, [1.0, 2.0])
        assert np.array_equal(out, np.array([1.0, 2.0, 4.0, 3.0, 6.0, 6.0, 12.0]))

    @pytest.mark.parametrize(
        "spec,d,expected",
        [
            (FeatureMapSpec.identity(), 5, 5),
            (FeatureMapSpec.polynomial(2), 3, 13),
            (FeatureMapSpec.exp_truncated(3), 2, 15),
            (FeatureMapSpec.block(2), 4, 16),
        ],
    )
    def test_lifted_dim(self, spec, d, expected):
        """Output length matches lifted_dim."""
        assert lifted_dim(spec, d) == expected
        assert apply_poly(spec, np.ones(d)).shape == (expected,)

    def test_normalised_input(self, rng):
        """normalize_input lifts x and 3x identically."""
        spec = FeatureMapSpec.exp_truncated(3)
        x = rng.standard_normal(3)
        assert np.allclose(apply_poly(spec, x), apply_poly(spec, 3.0 * x), atol=1e-14)

    def test_dimension_guard(self):
        """Oversized lifts raise before allocating."""
        with pytest.raises(CapacityError):
            apply_poly(FeatureMapSpec.block(4), np.ones(100))

    def test_guard_follows_settings(self):
        """The limit comes from settings."""
        with patch("src.memory.feature_maps.get_settings") as mock_settings:
            mock_settings.return_value.max_lifted_dim = 10
            with pytest.raises(CapacityError):
                apply_poly(FeatureMapSpec.polynomial(2), np.ones(3))

    def test_batch_columns(self, rng):
        """apply_batch lifts column by column."""
        spec = FeatureMapSpec.polynomial(2)
        xs = rng.standard_normal((3, 4))
        out = apply_batch(spec, xs)
        assert out.shape == (13, 4)
        assert np.array_equal(out[:, 2], apply_poly(spec, xs[:, 2]))


class TestKernelDot:
    """Test the implicit lifted inner product."""

    def test_matches_explicit_lift(self, rng):
        """Degree-3 polynomial kernel equals the materialised dot product."""
        spec = FeatureMapSpec.polynomial(3)
        x, y = rng.standard_normal(4), rng.standard_normal(4)
        explicit = apply_poly(spec, x) @ apply_poly(spec, y)
        assert abs(kernel_dot(x, y, spec) - explicit) <= 1e-10

    def test_block_kernel(self, rng):
        """Block kernel is (x . y)^p."""
        x, y = rng.standard_normal(3), rng.standard_normal(3)
        spec = FeatureMapSpec.block(2)
        assert kernel_dot(x, y, spec) == pytest.approx(float(x @ y) ** 2, rel=1e-12)
        assert abs(apply_poly(spec, x) @ apply_poly(spec, y) - float(x @ y) ** 2) <= 1e-10

    def test_exp_limit(self, rng):
        """Degree 16 on unit vectors approximates exp(q . k)."""
        spec = FeatureMapSpec.exp_truncated(16)
        q, k = unit(rng, 3), unit(rng, 3)
        assert abs(kernel_dot(q, k, spec) - math.exp(float(q @ k))) <= 1e-9

    @settings(max_examples=30, deadline=None)
    @given(
        x=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
        y=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    )
    def test_symmetry(self, x, y):
        """kernel_dot(x, y) = kernel_dot(y, x)."""
        spec = FeatureMapSpec.polynomial(3)
        assert abs(kernel_dot(x, y, spec) - kernel_dot(y, x, spec)) <= 1e-12


class TestMonomialDim:
    """Test distinct-monomial counts."""

    def test_counts(self):
        """Stacked counts degrees <= p, block exactly p."""
        assert monomial_dim(4, 2, stacked=True) == 15
        assert monomial_dim(4, 2, stacked=False) == 10
        assert monomial_dim(3, 1, stacked=False) == 3

    def test_block_rank_saturates(self, rng):
        """Block lifts of many keys have rank binom(d+1, 2) at p=2."""
        keys = rng.standard_normal((4, 14))
        phis = apply_batch(FeatureMapSpec.block(2), keys)
        assert matrix_rank(phis) == monomial_dim(4, 2, stacked=False)
