"""Outer optimizers for online training: SGD, RMSprop and Adam."""

from dataclasses import dataclass, field, replace
from typing import List, Literal, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..core.errors import ShapeError
from ..memory.linalg import Mat

OptimizerKind = Literal["sgd", "rmsprop", "adam"]


class OptimizerConfig(BaseModel):
    """Hyperparameters of the outer optimizer."""

    kind: OptimizerKind = Field(default="adam")
    lr: float = Field(default=1e-3, ge=0.0, description="Learning rate")
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    rho: float = Field(default=0.99, ge=0.0, lt=1.0, description="RMSprop decay")
    eps: float = Field(default=1e-8, gt=0.0)


@dataclass(frozen=True)
class OptimizerState:
    """Step count and per-parameter moment estimates."""

    config: OptimizerConfig
    step: int = 0
    first: Tuple[Mat, ...] = field(default_factory=tuple)
    second: Tuple[Mat, ...] = field(default_factory=tuple)

    @classmethod
    def create(cls, config: OptimizerConfig, params: Sequence[Mat]) -> "OptimizerState":
        zeros = tuple(np.zeros_like(p) for p in params)
        return cls(config=config, first=zeros, second=tuple(np.zeros_like(p) for p in params))


def outer_optimizer_step(
    state: OptimizerState,
    params: Sequence[Mat],
    grads: Sequence[Mat],
) -> Tuple[List[Mat], OptimizerState]:
    """One optimizer update; returns new parameters and state."""
    if len(params) != len(grads) or len(params) != len(state.first):
        raise ShapeError("parameters, gradients and optimizer moments are not congruent")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} differs from parameter shape {p.shape}")

    cfg = state.config
    step = state.step + 1

    if cfg.kind == "sgd":
        return [p - cfg.lr * g for p, g in zip(params, grads)], replace(state, step=step)

    if cfg.kind == "rmsprop":
        second = tuple(cfg.rho * s + (1.0 - cfg.rho) * g * g for s, g in zip(state.second, grads))
        new = [p - cfg.lr * g / (np.sqrt(s) + cfg.eps) for p, g, s in zip(params, grads, second)]
        return new, replace(state, step=step, second=second)

    first = tuple(cfg.beta1 * m + (1.0 - cfg.beta1) * g for m, g in zip(state.first, grads))
    second = tuple(cfg.beta2 * v + (1.0 - cfg.beta2) * g * g for v, g in zip(state.second, grads))
    c1 = 1.0 - cfg.beta1 ** step
    c2 = 1.0 - cfg.beta2 ** step
    new = [
        p - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        for p, m, v in zip(params, first, second)
    ]
    return new, replace(state, step=step, first=first, second=second)
