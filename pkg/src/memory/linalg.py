"""Dense float64 linear algebra for memory rules.

Matrices are numpy ``float64`` arrays. Every public operation checks shapes
and rejects non-finite input, so a bad state fails where it is produced.
"""

from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..core.errors import CapacityError, ShapeError

Mat = NDArray[np.float64]
Vec = NDArray[np.float64]

# (a, b, c) for X <- a X + b (X X^T) X + c (X X^T)^2 X
CUBIC_NS: Tuple[float, float, float] = (1.5, -0.5, 0.0)
QUINTIC_NS: Tuple[float, float, float] = (3.4445, -4.7750, 2.0315)

MAX_SVD_DIM = 64


def ensure_finite(a: np.ndarray, name: str = "operand") -> None:
    """Raise ``ValueError`` if ``a`` holds NaN or inf."""
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")


def as_mat(a: ArrayLike, name: str = "matrix") -> Mat:
    """Coerce to a finite 2-D float64 array."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {out.shape}")
    ensure_finite(out, name)
    return out


def as_vec(x: ArrayLike, name: str = "vector") -> Vec:
    """Coerce to a finite 1-D float64 array."""
    out = np.asarray(x, dtype=np.float64)
    if out.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {out.shape}")
    ensure_finite(out, name)
    return out


def matmul(a: ArrayLike, b: ArrayLike) -> Mat:
    """Matrix product with shape validation."""
    a = as_mat(a, "left operand")
    b = as_mat(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def self_tensor(x: ArrayLike, p: int) -> Vec:
    """Flattened p-fold Kronecker power of ``x`` (length d**p).

    ``p = 0`` gives the scalar 1 as a length-1 vector. The recursion is
    x^{(p)} = x kron x^{(p-1)}.
    """
    if p < 0:
        raise ValueError(f"tensor power must be >= 0, got {p}")
    x = as_vec(x, "x")
    power = np.ones(1)
    for _ in range(p):
        power = np.kron(x, power)
    return power


def newton_schulz(
    s: ArrayLike,
    k: int = 5,
    coeffs: Tuple[float, float, float] = CUBIC_NS,
) -> Mat:
    """Approximate the orthogonal polar factor of ``s``.

    The input is prescaled by its Frobenius norm so every singular value lies
    in (0, 1]; each step applies X <- a X + b (X X^T) X + c (X X^T)^2 X.
    Zero input returns zeros.
    """
    if k < 1:
        raise ValueError(f"Newton-Schulz needs k >= 1, got {k}")
    s = as_mat(s, "s")
    norm = np.linalg.norm(s)
    if norm == 0.0:
        return np.zeros_like(s)

    tall = s.shape[0] > s.shape[1]
    x = (s.T if tall else s) / norm
    a, b, c = coeffs
    for _ in range(k):
        gram = x @ x.T
        poly = b * gram
        if c != 0.0:
            poly = poly + c * (gram @ gram)
        x = a * x + poly @ x
    return x.T if tall else x


def svd_oracle(a: ArrayLike, max_sweeps: int = 100) -> Tuple[Mat, Vec, Mat]:
    """Thin SVD by one-sided Jacobi rotations.

    Returns ``(U, sigma, Vt)`` with sigma sorted descending, ``U`` of shape
    (m, r) and ``Vt`` of shape (r, n), r = min(m, n). Columns of ``U`` for
    zero singular values are left at zero.
    """
    a = as_mat(a, "a")
    m, n = a.shape
    if min(m, n) > MAX_SVD_DIM:
        raise CapacityError(f"svd_oracle supports min(m, n) <= {MAX_SVD_DIM}, got {a.shape}")

    wide = m < n
    work = (a.T if wide else a).copy()
    rows, cols = work.shape
    v = np.eye(cols)
    tol = rows * np.finfo(np.float64).eps

    for _ in range(max_sweeps):
        rotated = False
        for i in range(cols - 1):
            for j in range(i + 1, cols):
                ci = work[:, i]
                cj = work[:, j]
                alpha = ci @ ci
                beta = cj @ cj
                gamma = ci @ cj
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                theta = 0.5 * np.arctan2(2.0 * gamma, beta - alpha)
                c, s = np.cos(theta), np.sin(theta)
                wi = work[:, i].copy()
                work[:, i] = c * wi - s * work[:, j]
                work[:, j] = s * wi + c * work[:, j]
                vi = v[:, i].copy()
                v[:, i] = c * vi - s * v[:, j]
                v[:, j] = s * vi + c * v[:, j]
        if not rotated:
            break

    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]

    u = np.zeros_like(work)
    nonzero = sigma > 0.0
    u[:, nonzero] = work[:, nonzero] / sigma[nonzero]

    if wide:
        # a^T = u diag(sigma) v^T
        return v, sigma, u.T
    return u, sigma, v.T


def matrix_rank(a: ArrayLike, rtol: float = 1e-10) -> int:
    """Numerical rank: singular values above ``rtol * sigma_max``."""
    _, sigma, _ = svd_oracle(a)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.sum(sigma > rtol * sigma[0]))


def pinv(a: ArrayLike, rtol: float = 1e-12) -> Mat:
    """Moore-Penrose pseudoinverse from ``svd_oracle``."""
    u, sigma, vt = svd_oracle(a)
    if sigma.size == 0 or sigma[0] == 0.0:
        return np.zeros((vt.shape[1], u.shape[0]))
    keep = sigma > rtol * sigma[0]
    inv = np.zeros_like(sigma)
    inv[keep] = 1.0 / sigma[keep]
    return (vt.T * inv) @ u.T


def polar_factor(a: ArrayLike) -> Mat:
    """Exact ``U V^T`` from the SVD oracle."""
    u, _, vt = svd_oracle(a)
    return u @ vt
