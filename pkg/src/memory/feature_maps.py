"""Polynomial feature maps for keys and queries.

A stacked map sends x to [a_0, a_1 x, a_2 x^{(2)}, ..., a_p x^{(p)}] where
x^{(i)} is the flattened i-fold Kronecker power, so the lifted inner product
is sum_i a_i^2 (x . y)^i. The exponential map truncates the Taylor series of
exp(x . y) with a_i = 1/sqrt(i!).
"""

import math
from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.config import get_settings
from ..core.errors import CapacityError, ShapeError
from .linalg import Mat, Vec, as_mat, as_vec, self_tensor

FeatureKind = Literal["identity", "polynomial", "exp_truncated", "block"]


def init_taylor_coeffs(p: int) -> Tuple[float, ...]:
    """Taylor initialisation a_i = 1/i! for i = 0..p."""
    if p < 0:
        raise ValueError(f"degree must be >= 0, got {p}")
    return tuple(1.0 / math.factorial(i) for i in range(p + 1))


def exp_coeffs(p: int) -> Tuple[float, ...]:
    """Coefficients a_i = 1/sqrt(i!) whose squares are the exp Taylor terms."""
    if p < 0:
        raise ValueError(f"degree must be >= 0, got {p}")
    return tuple(1.0 / math.sqrt(math.factorial(i)) for i in range(p + 1))


class FeatureMapSpec(BaseModel):
    """Feature map description: kind, degree, per-degree coefficients."""

    model_config = ConfigDict(frozen=True)

    kind: FeatureKind = Field(default="identity", description="Map family")
    degree: int = Field(default=1, ge=0, description="Highest tensor power")
    coeffs: Tuple[float, ...] = Field(default=(0.0, 1.0), description="a_0..a_degree")
    normalize_input: bool = Field(default=False, description="Project inputs to unit norm")

    @model_validator(mode="after")
    def validate_coeffs(self) -> "FeatureMapSpec":
        """Check coefficient count and kind-specific shape."""
        if len(self.coeffs) != self.degree + 1:
            raise ValueError(
                f"coeffs must have degree+1={self.degree + 1} entries, got {len(self.coeffs)}"
            )
        if not all(math.isfinite(a) for a in self.coeffs):
            raise ValueError("coeffs must be finite")
        if self.kind == "identity" and (self.degree != 1 or self.coeffs != (0.0, 1.0)):
            raise ValueError("identity map has degree 1 and coeffs (0, 1)")
        if self.kind == "exp_truncated":
            expected = exp_coeffs(self.degree)
            if any(abs(a - b) > 1e-15 for a, b in zip(self.coeffs, expected)):
                raise ValueError("exp_truncated coeffs are fixed to 1/sqrt(i!)")
        return self

    @classmethod
    def identity(cls) -> "FeatureMapSpec":
        return cls()

    @classmethod
    def polynomial(
        cls,
        degree: int,
        coeffs: Optional[Sequence[float]] = None,
        normalize_input: bool = False,
    ) -> "FeatureMapSpec":
        """Stacked polynomial map; coefficients default to 1/i!."""
        values = tuple(float(a) for a in coeffs) if coeffs is not None else init_taylor_coeffs(degree)
        return cls(kind="polynomial", degree=degree, coeffs=values, normalize_input=normalize_input)

    @classmethod
    def exp_truncated(cls, degree: int, normalize_input: bool = True) -> "FeatureMapSpec":
        """Truncated exponential-kernel map of order ``degree``."""
        return cls(
            kind="exp_truncated",
            degree=degree,
            coeffs=exp_coeffs(degree),
            normalize_input=normalize_input,
        )

    @classmethod
    def block(cls, degree: int, normalize_input: bool = False) -> "FeatureMapSpec":
        """Pure Kronecker power x^{(degree)} without lower blocks."""
        coeffs = tuple(1.0 if i == degree else 0.0 for i in range(degree + 1))
        return cls(kind="block", degree=degree, coeffs=coeffs, normalize_input=normalize_input)


def lifted_dim(spec: FeatureMapSpec, d: int) -> int:
    """Output dimension of ``spec`` on d-dimensional input."""
    if spec.kind == "identity":
        return d
    if spec.kind == "block":
        return d ** spec.degree
    return sum(d ** i for i in range(spec.degree + 1))


def monomial_dim(d: int, p: int, stacked: bool = True) -> int:
    """Number of distinct monomials: degree <= p (stacked) or exactly p (block)."""
    if stacked:
        return math.comb(d + p, p)
    return math.comb(d + p - 1, p)


def _prepare(spec: FeatureMapSpec, x: ArrayLike) -> Vec:
    x = as_vec(x, "feature-map input")
    if spec.normalize_input:
        norm = np.linalg.norm(x)
        if norm > 0.0:
            x = x / norm
    return x


def apply_poly(spec: FeatureMapSpec, x: ArrayLike) -> Vec:
    """Lift ``x`` through ``spec``."""
    x = _prepare(spec, x)
    if spec.kind == "identity":
        return x.copy()

    dim = lifted_dim(spec, x.shape[0])
    limit = get_settings().max_lifted_dim
    if dim > limit:
        raise CapacityError(
            f"feature map of degree {spec.degree} on d={x.shape[0]} has dimension {dim} > {limit}"
        )
    if spec.kind == "block":
        return self_tensor(x, spec.degree)

    parts = []
    power = np.ones(1)
    for i, a in enumerate(spec.coeffs):
        if i > 0:
            power = np.kron(x, power)
        parts.append(a * power)
    return np.concatenate(parts)


def apply_batch(spec: FeatureMapSpec, xs: ArrayLike) -> Mat:
    """Lift every column of ``xs``; returns a (lifted_dim, n) matrix."""
    xs = as_mat(xs, "feature-map batch")
    if xs.shape[1] == 0:
        return np.zeros((lifted_dim(spec, xs.shape[0]), 0))
    return np.stack([apply_poly(spec, xs[:, j]) for j in range(xs.shape[1])], axis=1)


def kernel_dot(x: ArrayLike, y: ArrayLike, spec: FeatureMapSpec) -> float:
    """Inner product of lifted vectors without materialising them."""
    x = _prepare(spec, x)
    y = _prepare(spec, y)
    if x.shape != y.shape:
        raise ShapeError(f"kernel_dot inputs differ: {x.shape} vs {y.shape}")
    s = float(x @ y)
    if spec.kind == "identity":
        return s
    if spec.kind == "block":
        return s ** spec.degree
    return float(sum(a * a * s ** i for i, a in enumerate(spec.coeffs)))
