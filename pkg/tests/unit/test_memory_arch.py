"""Tests for memory architectures and their gradients."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.core.errors import ShapeError
from src.memory.arch import (
    GradState,
    MemoryState,
    forward,
    grad_dot,
    grad_l2,
    grad_l2_batch,
    init_memory,
    param_grad,
)
from src.memory.gradcheck import max_relative_error, numerical_grad


class TestInitMemory:
    """Test memory initialisation."""

    def test_matrix_starts_at_zero(self):
        """Matrix memory is a zero d_v x D matrix."""
        memory = init_memory("matrix", 5, 3)
        assert memory.weights[0].shape == (3, 5)
        assert not memory.weights[0].any()

    @pytest.mark.parametrize("arch,count", [("mlp2", 2), ("gated_mlp", 3), ("stackL", 6)])
    def test_deep_layouts(self, arch, count):
        """Weight counts per architecture (stackL with depth 3)."""
        memory = init_memory(arch, 4, 4, expansion=2, depth=3)
        assert len(memory.weights) == count
        assert memory.blocks()[0][0].shape == (4, 8)

    def test_projection_when_dims_differ(self):
        """A leading projection maps the lifted key to the value dimension."""
        memory = init_memory("mlp2", 6, 3)
        assert memory.projection
        assert memory.weights[0].shape == (3, 6)
        assert forward(memory, np.ones(6)).shape == (3,)

    def test_seeded(self):
        """Same seed, same weights."""
        a = init_memory("gated_mlp", 3, 3, seed=5)
        b = init_memory("gated_mlp", 3, 3, seed=5)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_uniform_bounds(self):
        """Weights lie within 1/sqrt(fan_in)."""
        memory = init_memory("mlp2", 16, 16, expansion=4)
        w1, w2 = memory.blocks()[0]
        assert np.max(np.abs(w1)) <= 1.0 / np.sqrt(64)
        assert np.max(np.abs(w2)) <= 1.0 / np.sqrt(16)

    def test_invalid_layout(self):
        """Mis-shaped weights are refused."""
        with pytest.raises(ShapeError):
            MemoryState("matrix", (np.zeros((2, 2)),), in_dim=3, out_dim=2)

    def test_unknown_arch(self):
        """Unknown architecture names are refused."""
        with pytest.raises(ValueError):
            MemoryState("conv", (np.zeros((2, 2)),), in_dim=2, out_dim=2)

    def test_non_finite_weights(self):
        """NaN weights are refused."""
        with pytest.raises(ValueError):
            MemoryState("matrix", (np.full((2, 2), np.nan),), in_dim=2, out_dim=2)


class TestForward:
    """Test memory evaluation."""

    @settings(max_examples=25, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(-3, 3))
    def test_matrix_linearity(self, a, b):
        """Matrix memory is linear in its input."""
        g = np.random.default_rng(3)
        memory = init_memory("matrix", 4, 3).with_weights([g.standard_normal((3, 4))])
        x, y = g.standard_normal(4), g.standard_normal(4)
        lhs = forward(memory, a * x + b * y)
        rhs = a * forward(memory, x) + b * forward(memory, y)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))

    def test_batch_matches_columns(self, rng):
        """Batched evaluation equals column-wise evaluation."""
        memory = init_memory("stackL", 3, 3, seed=1, depth=2)
        xs = rng.standard_normal((3, 5))
        out = forward(memory, xs)
        assert np.allclose(out[:, 2], forward(memory, xs[:, 2]), atol=1e-14)

    def test_zero_hidden_is_identity(self):
        """A residual block with zero weights passes its input through."""
        memory = init_memory("mlp2", 3, 3)
        memory = memory.with_weights([np.zeros_like(w) for w in memory.weights])
        x = np.array([1.0, -2.0, 0.5])
        assert np.array_equal(forward(memory, x), x)

    def test_wrong_input_dim(self):
        """Inputs must match the memory's input dimension."""
        with pytest.raises(ShapeError):
            forward(init_memory("matrix", 4, 3), np.ones(5))


class TestGradients:
    """Test analytic gradients against finite differences."""

    @pytest.mark.parametrize("arch", ["matrix", "mlp2", "gated_mlp", "stackL"])
    @pytest.mark.parametrize("grad_fn", [grad_l2, grad_dot], ids=["l2", "dot"])
    @pytest.mark.parametrize("activation", ["gelu", "silu"])
    def test_finite_differences(self, arch, grad_fn, activation):
        """Relative error against central differences stays below 1e-5."""
        g = np.random.default_rng(11)
        for _ in range(3):
            memory = init_memory(arch, 3, 3, seed=int(g.integers(1000)), expansion=2,
                                 activation=activation)
            if arch == "matrix":
                memory = memory.with_weights([g.standard_normal((3, 3))])
            x, v = g.standard_normal(3), g.standard_normal(3)
            _, analytic = grad_fn(memory, x, v)
            numeric = numerical_grad(lambda m: grad_fn(m, x, v)[0], memory)
            assert max_relative_error(analytic, numeric) <= 1e-5

    def test_matrix_l2_closed_form(self, rng):
        """Matrix l2 gradient is 2 (M phi - v) phi^T."""
        w = rng.standard_normal((2, 3))
        memory = init_memory("matrix", 3, 2).with_weights([w])
        phi, v = rng.standard_normal(3), rng.standard_normal(2)
        loss, grad = grad_l2(memory, phi, v)
        r = w @ phi - v
        assert loss == pytest.approx(float(r @ r))
        assert np.allclose(grad.grads[0], 2.0 * np.outer(r, phi), atol=1e-14)

    def test_matrix_dot_closed_form(self, rng):
        """Matrix dot gradient is v phi^T."""
        memory = init_memory("matrix", 3, 2)
        phi, v = rng.standard_normal(3), rng.standard_normal(2)
        _, grad = grad_dot(memory, phi, v)
        assert np.array_equal(grad.grads[0], np.outer(v, phi))

    def test_param_grad_matches_l2(self, rng):
        """VJP with dy = 2r reproduces grad_l2."""
        memory = init_memory("gated_mlp", 3, 3, seed=2)
        x, v = rng.standard_normal(3), rng.standard_normal(3)
        _, expected = grad_l2(memory, x, v)
        got = param_grad(memory, x, 2.0 * (forward(memory, x) - v))
        assert all(np.allclose(a, b, atol=1e-14) for a, b in zip(got.grads, expected.grads))

    def test_batch_gradient_sums(self, rng):
        """Batch gradient is the sum of per-column gradients."""
        memory = init_memory("mlp2", 3, 3, seed=4)
        xs, vs = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        loss, grad, residuals = grad_l2_batch(memory, xs, vs)
        total = GradState.zeros_like(memory)
        total_loss = 0.0
        for j in range(4):
            l_j, g_j = grad_l2(memory, xs[:, j], vs[:, j])
            total = total + g_j
            total_loss += l_j
        assert loss == pytest.approx(total_loss, rel=1e-12)
        assert all(np.allclose(a, b, atol=1e-12) for a, b in zip(grad.grads, total.grads))
        assert residuals.shape == (4,)

    def test_value_dim_checked(self):
        """Values must match the output dimension."""
        with pytest.raises(ShapeError):
            grad_l2(init_memory("matrix", 3, 2), np.ones(3), np.ones(3))


class TestGradState:
    """Test gradient containers."""

    def test_arithmetic(self):
        """Addition, scaling and norms."""
        a = GradState((np.ones((2, 2)), np.full((1, 3), 2.0)))
        b = a + a.scale(-0.5)
        assert np.array_equal(b.grads[1], np.full((1, 3), 1.0))
        assert a.max_abs() == 2.0
        assert a.frobenius_norm() == pytest.approx(np.sqrt(4.0 + 12.0))

    def test_incongruent_addition(self):
        """Lists of different length cannot be added."""
        with pytest.raises(ShapeError):
            GradState((np.ones(1),)) + GradState((np.ones(1), np.ones(1)))

    def test_scaled_add(self):
        """scaled_add computes alpha W + coef D."""
        memory = init_memory("matrix", 2, 2).with_weights([np.eye(2)])
        out = memory.scaled_add(0.5, 2.0, GradState((np.ones((2, 2)),)))
        assert np.array_equal(out.weights[0], 0.5 * np.eye(2) + 2.0)
