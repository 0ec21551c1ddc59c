"""Reference attention for the non-parametric end of the rule lattice.

Rows of Q, K, V are tokens. All variants are causal.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core.errors import ShapeError
from .linalg import Mat, Vec, as_mat


@dataclass(frozen=True)
class AttnBatch:
    """Causal attention inputs.

    Attributes:
        Q: (L, d_k) queries
        K: (L, d_k) keys
        V: (L, d_v) values
        window: Optional sliding-window length
        scale: Divide logits by sqrt(d_k)
    """

    Q: Mat
    K: Mat
    V: Mat
    window: Optional[int] = None
    scale: bool = True

    def __post_init__(self):
        q = as_mat(self.Q, "Q")
        k = as_mat(self.K, "K")
        v = as_mat(self.V, "V")
        if not q.shape[0] == k.shape[0] == v.shape[0]:
            raise ShapeError("Q, K and V must hold the same number of tokens")
        if q.shape[1] != k.shape[1]:
            raise ShapeError("queries and keys must share a dimension")
        if self.window is not None and self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "K", k)
        object.__setattr__(self, "V", v)

    @property
    def length(self) -> int:
        return self.Q.shape[0]

    def logits(self) -> Mat:
        raw = self.Q @ self.K.T
        return raw / math.sqrt(self.Q.shape[1]) if self.scale else raw

    def band(self, window: Optional[int] = None) -> np.ndarray:
        """Boolean (L, L) mask of visible keys per query."""
        c = window if window is not None else self.window
        rows, cols = np.indices((self.length, self.length))
        visible = cols <= rows
        if c is not None:
            visible &= rows - cols < c
        return visible


def _masked_softmax(logits: Mat, visible: np.ndarray) -> Mat:
    masked = np.where(visible, logits, -np.inf)
    masked = masked - np.max(masked, axis=1, keepdims=True)
    weights = np.exp(masked)
    return weights / np.sum(weights, axis=1, keepdims=True)


def softmax_attention(batch: AttnBatch) -> Mat:
    """Causal softmax attention (the batch window, if set, is honoured)."""
    if batch.length == 0:
        return np.zeros((0, batch.V.shape[1]))
    return _masked_softmax(batch.logits(), batch.band()) @ batch.V


def sliding_window_attention(batch: AttnBatch, c: int) -> Mat:
    """Softmax attention over the last ``c`` tokens."""
    if c < 1:
        raise ValueError(f"window must be >= 1, got {c}")
    if batch.length == 0:
        return np.zeros((0, batch.V.shape[1]))
    return _masked_softmax(batch.logits(), batch.band(c)) @ batch.V


def unnormalized_exp_attention(batch: AttnBatch) -> Mat:
    """y_t = sum_{i<=t} v_i exp(q_t . k_i) without normalisation."""
    weights = np.where(batch.band(), np.exp(batch.logits()), 0.0)
    return weights @ batch.V


def nadaraya_watson(batch: AttnBatch, t: int, window: Optional[int] = None) -> Vec:
    """Minimiser of sum_i s_i ||v_i - m||^2 with s_i = exp(q_t . k_i), by least squares."""
    visible = batch.band(window)[t]
    logits = batch.logits()[t, visible]
    values = batch.V[visible]
    s = np.exp(logits - np.max(logits))
    d = values.shape[1]
    root = np.sqrt(s)
    design = np.kron(root.reshape(-1, 1), np.eye(d))
    target = (root[:, None] * values).reshape(-1)
    solution, *_ = np.linalg.lstsq(design, target, rcond=None)
    return solution
