"""Central finite-difference checks for memory gradients."""

from typing import Callable, List

import numpy as np

from .arch import GradState, MemoryState
from .linalg import Mat


def numerical_grad(
    loss_fn: Callable[[MemoryState], float],
    memory: MemoryState,
    h: float = 1e-5,
) -> GradState:
    """Central differences (f(w+h) - f(w-h)) / 2h over every weight entry."""
    grads: List[Mat] = []
    for j, w in enumerate(memory.weights):
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            tried = [x.copy() for x in memory.weights]
            tried[j][idx] = w[idx] - h
            f_minus = loss_fn(memory.with_weights(tried))
            tried[j][idx] = w[idx] + h
            f_plus = loss_fn(memory.with_weights(tried))
            g[idx] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return GradState(tuple(grads))


def max_relative_error(analytic: GradState, numeric: GradState) -> float:
    """Largest entry difference relative to the largest gradient magnitude."""
    diff = max(
        (float(np.max(np.abs(a - n))) for a, n in zip(analytic.grads, numeric.grads) if a.size),
        default=0.0,
    )
    scale = max(analytic.max_abs(), numeric.max_abs())
    if scale == 0.0:
        return diff
    return diff / scale
