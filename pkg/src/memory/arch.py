"""Memory architectures and their analytic parameter gradients.

Supported architectures (x is the lifted key, h the hidden width):

- ``matrix``:    W x
- ``mlp2``:      x + W1 act(W2 x)
- ``gated_mlp``: x + W1 (act(W2 x) * W3 x)
- ``stackL``:    L residual ``mlp2`` blocks applied in sequence

When the input dimension differs from the output dimension a deep memory
starts with a non-residual projection W0 (out_dim x in_dim).

Forward and backward passes run on column batches; single vectors are
treated as one-column batches.
"""

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Literal, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from ..core.errors import ShapeError
from .linalg import Mat, Vec, as_mat, as_vec, ensure_finite

Arch = Literal["matrix", "mlp2", "gated_mlp", "stackL"]
Activation = Literal["gelu", "silu"]

ARCHS: Tuple[str, ...] = ("matrix", "mlp2", "gated_mlp", "stackL")

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    """GELU, tanh approximation."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x ** 3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)


def silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def silu_grad(x: np.ndarray) -> np.ndarray:
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


ACTIVATIONS: Dict[str, Tuple[Callable[[np.ndarray], np.ndarray], Callable[[np.ndarray], np.ndarray]]] = {
    "gelu": (gelu, gelu_grad),
    "silu": (silu, silu_grad),
}


def _block_size(arch: str) -> int:
    return 3 if arch == "gated_mlp" else 2


@dataclass(frozen=True)
class GradState:
    """Gradients congruent with a ``MemoryState``'s weight list."""

    grads: Tuple[Mat, ...]

    @classmethod
    def zeros_like(cls, memory: "MemoryState") -> "GradState":
        return cls(tuple(np.zeros_like(w) for w in memory.weights))

    def __add__(self, other: "GradState") -> "GradState":
        if len(self.grads) != len(other.grads):
            raise ShapeError("gradient lists are not congruent")
        return GradState(tuple(a + b for a, b in zip(self.grads, other.grads)))

    def scale(self, factor: float) -> "GradState":
        return GradState(tuple(factor * g for g in self.grads))

    def max_abs(self) -> float:
        return max((float(np.max(np.abs(g))) for g in self.grads if g.size), default=0.0)

    def frobenius_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(g * g)) for g in self.grads))


@dataclass(frozen=True)
class MemoryState:
    """Parameters of a memory module.

    Attributes:
        arch: Architecture name
        weights: Weight matrices in layout order ([W0], then per-block W1, W2[, W3])
        in_dim: Input (lifted key) dimension
        out_dim: Output (value) dimension
        activation: Hidden nonlinearity for deep architectures
        projection: Whether weights start with the W0 projection
    """

    arch: Arch
    weights: Tuple[Mat, ...]
    in_dim: int
    out_dim: int
    activation: Activation = "gelu"
    projection: bool = False

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown memory architecture '{self.arch}'")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        for w in self.weights:
            ensure_finite(w, "memory weights")
        self._check_layout()

    def _check_layout(self) -> None:
        ws = list(self.weights)
        if self.arch == "matrix":
            if len(ws) != 1 or ws[0].shape != (self.out_dim, self.in_dim):
                raise ShapeError(f"matrix memory must be {(self.out_dim, self.in_dim)}")
            return
        if self.projection:
            w0 = ws.pop(0)
            if w0.shape != (self.out_dim, self.in_dim):
                raise ShapeError(f"projection must be {(self.out_dim, self.in_dim)}, got {w0.shape}")
        elif self.in_dim != self.out_dim:
            raise ShapeError("residual memory needs in_dim == out_dim or a projection")
        size = _block_size(self.arch)
        if not ws or len(ws) % size:
            raise ShapeError(f"{self.arch} weights do not form whole blocks")
        if self.arch in ("mlp2", "gated_mlp") and len(ws) != size:
            raise ShapeError(f"{self.arch} has exactly one block")
        d = self.out_dim
        for start in range(0, len(ws), size):
            w1, w2 = ws[start], ws[start + 1]
            h = w1.shape[1]
            if w1.shape != (d, h) or w2.shape != (h, d):
                raise ShapeError(f"block weights must be ({d}, h) and (h, {d})")
            if size == 3 and ws[start + 2].shape != (h, d):
                raise ShapeError(f"gate weights must be ({h}, {d})")

    def blocks(self) -> List[Tuple[Mat, ...]]:
        """Residual blocks (empty for matrix memory)."""
        if self.arch == "matrix":
            return []
        ws = list(self.weights[1:] if self.projection else self.weights)
        size = _block_size(self.arch)
        return [tuple(ws[i:i + size]) for i in range(0, len(ws), size)]

    def with_weights(self, weights: Sequence[Mat]) -> "MemoryState":
        return MemoryState(
            arch=self.arch,
            weights=tuple(np.asarray(w, dtype=np.float64) for w in weights),
            in_dim=self.in_dim,
            out_dim=self.out_dim,
            activation=self.activation,
            projection=self.projection,
        )

    def scaled_add(self, alpha: float, coef: float, delta: GradState) -> "MemoryState":
        """Return alpha * W + coef * delta for every weight."""
        if len(delta.grads) != len(self.weights):
            raise ShapeError("update is not congruent with memory weights")
        return self.with_weights(
            [alpha * w + coef * g for w, g in zip(self.weights, delta.grads)]
        )

    def flat(self) -> Vec:
        """All weights concatenated, for comparisons."""
        return np.concatenate([w.ravel() for w in self.weights])


def init_memory(
    arch: Arch,
    in_dim: int,
    out_dim: int,
    seed: int = 0,
    expansion: int = 1,
    depth: int = 2,
    activation: Activation = "gelu",
) -> MemoryState:
    """Initialise a memory.

    Matrix memories start at zero. Deep memories draw every weight from
    U(-1/sqrt(fan_in), 1/sqrt(fan_in)) using a generator seeded by ``seed``.
    """
    if in_dim < 1 or out_dim < 1:
        raise ValueError("memory dimensions must be positive")
    if arch == "matrix":
        return MemoryState("matrix", (np.zeros((out_dim, in_dim)),), in_dim, out_dim)
    if expansion < 1 or depth < 1:
        raise ValueError("expansion and depth must be >= 1")

    rng = np.random.default_rng(seed)

    def uniform(rows: int, cols: int) -> Mat:
        bound = 1.0 / math.sqrt(cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    d = out_dim
    h = d * expansion
    weights: List[Mat] = []
    projection = in_dim != out_dim
    if projection:
        weights.append(uniform(out_dim, in_dim))
    n_blocks = depth if arch == "stackL" else 1
    for _ in range(n_blocks):
        weights.append(uniform(d, h))
        weights.append(uniform(h, d))
        if arch == "gated_mlp":
            weights.append(uniform(h, d))
    return MemoryState(arch, tuple(weights), in_dim, out_dim, activation, projection)


def _as_batch(memory: MemoryState, x: ArrayLike) -> Tuple[Mat, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = as_mat(arr.reshape(-1, 1) if single else arr, "memory input")
    if batch.shape[0] != memory.in_dim:
        raise ShapeError(f"memory expects inputs of dim {memory.in_dim}, got {batch.shape[0]}")
    return batch, single


def _forward_cache(memory: MemoryState, xs: Mat) -> Tuple[Mat, list]:
    act, _ = ACTIVATIONS[memory.activation]
    if memory.arch == "matrix":
        return memory.weights[0] @ xs, []
    h = memory.weights[0] @ xs if memory.projection else xs
    cache = []
    for block in memory.blocks():
        if memory.arch == "gated_mlp":
            w1, w2, w3 = block
            z = w2 @ h
            g = w3 @ h
            a = act(z)
            p = a * g
            cache.append((h, z, g, a, p))
            h = h + w1 @ p
        else:
            w1, w2 = block
            z = w2 @ h
            a = act(z)
            cache.append((h, z, a))
            h = h + w1 @ a
    return h, cache


def forward(memory: MemoryState, x: ArrayLike) -> np.ndarray:
    """Evaluate the memory on a vector or on a batch of columns."""
    xs, single = _as_batch(memory, x)
    out, _ = _forward_cache(memory, xs)
    return out[:, 0] if single else out


def _backward(memory: MemoryState, xs: Mat, cache: list, dy: Mat) -> List[Mat]:
    _, act_grad = ACTIVATIONS[memory.activation]
    if memory.arch == "matrix":
        return [dy @ xs.T]

    block_grads: List[List[Mat]] = []
    dh = dy
    for block, saved in zip(reversed(memory.blocks()), reversed(cache)):
        if memory.arch == "gated_mlp":
            w1, w2, w3 = block
            h, z, g, a, p = saved
            dw1 = dh @ p.T
            dp = w1.T @ dh
            dz = dp * g * act_grad(z)
            dg = dp * a
            dw2 = dz @ h.T
            dw3 = dg @ h.T
            dh = dh + w2.T @ dz + w3.T @ dg
            block_grads.append([dw1, dw2, dw3])
        else:
            w1, w2 = block
            h, z, a = saved
            dw1 = dh @ a.T
            dz = (w1.T @ dh) * act_grad(z)
            dw2 = dz @ h.T
            dh = dh + w2.T @ dz
            block_grads.append([dw1, dw2])

    grads: List[Mat] = []
    if memory.projection:
        grads.append(dh @ xs.T)
    for bg in reversed(block_grads):
        grads.extend(bg)
    return grads


def param_grad(memory: MemoryState, x: ArrayLike, dy: ArrayLike) -> GradState:
    """Vector-Jacobian product: gradient of <forward(x), dy> w.r.t. the weights."""
    xs, single = _as_batch(memory, x)
    dys = np.asarray(dy, dtype=np.float64)
    dys = dys.reshape(-1, 1) if single else dys
    if dys.shape != (memory.out_dim, xs.shape[1]):
        raise ShapeError(f"output gradient must be {(memory.out_dim, xs.shape[1])}, got {dys.shape}")
    _, cache = _forward_cache(memory, xs)
    return GradState(tuple(_backward(memory, xs, cache, dys)))


def grad_l2(memory: MemoryState, phi_k: ArrayLike, v: ArrayLike) -> Tuple[float, GradState]:
    """Loss ||M(phi_k) - v||^2 and its weight gradient."""
    xs, _ = _as_batch(memory, as_vec(phi_k, "phi_k"))
    v = as_vec(v, "v")
    if v.shape[0] != memory.out_dim:
        raise ShapeError(f"value must have dim {memory.out_dim}, got {v.shape[0]}")
    out, cache = _forward_cache(memory, xs)
    r = out[:, 0] - v
    loss = float(r @ r)
    return loss, GradState(tuple(_backward(memory, xs, cache, 2.0 * r.reshape(-1, 1))))


def grad_dot(memory: MemoryState, phi_k: ArrayLike, v: ArrayLike) -> Tuple[float, GradState]:
    """Similarity <M(phi_k), v> and its weight gradient."""
    xs, _ = _as_batch(memory, as_vec(phi_k, "phi_k"))
    v = as_vec(v, "v")
    if v.shape[0] != memory.out_dim:
        raise ShapeError(f"value must have dim {memory.out_dim}, got {v.shape[0]}")
    out, cache = _forward_cache(memory, xs)
    loss = float(out[:, 0] @ v)
    return loss, GradState(tuple(_backward(memory, xs, cache, v.reshape(-1, 1))))


def grad_l2_batch(
    memory: MemoryState, xs: ArrayLike, vs: ArrayLike
) -> Tuple[float, GradState, Vec]:
    """Summed l2 loss over columns, its gradient, and per-column residual norms."""
    xs, _ = _as_batch(memory, xs)
    vs = as_mat(vs, "values")
    if vs.shape != (memory.out_dim, xs.shape[1]):
        raise ShapeError(f"values must be {(memory.out_dim, xs.shape[1])}, got {vs.shape}")
    out, cache = _forward_cache(memory, xs)
    r = out - vs
    loss = float(np.sum(r * r))
    grads = GradState(tuple(_backward(memory, xs, cache, 2.0 * r)))
    return loss, grads, np.linalg.norm(r, axis=0)


GradFn = Callable[[MemoryState, ArrayLike, ArrayLike], Tuple[float, GradState]]

LOSS_GRADS: Dict[str, GradFn] = {"l2": grad_l2, "dot": grad_dot}
