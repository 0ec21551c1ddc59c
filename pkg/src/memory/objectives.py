"""Windowed attentional-bias objectives.

A window holds the last c (lifted key, value) pairs, oldest first. Gate
gamma[c-1] weights the newest pair, gamma[c-2] the one before it, and so on;
a window shorter than c at the start of a stream uses the trailing gates.
"""

from typing import Literal, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.errors import ShapeError
from .arch import LOSS_GRADS, GradState, MemoryState
from .linalg import Vec

LossBase = Literal["l2", "dot"]

Window = Sequence[Tuple[Vec, Vec]]


class WindowLoss(BaseModel):
    """Window length, per-offset gates and base loss."""

    model_config = ConfigDict(frozen=True)

    c: int = Field(default=1, ge=1, description="Window length")
    gammas: Optional[Tuple[float, ...]] = Field(
        default=None, description="Per-offset gates in [0, 1]; None means all ones"
    )
    base: LossBase = Field(default="l2", description="Per-pair loss")

    @model_validator(mode="after")
    def validate_gammas(self) -> "WindowLoss":
        if self.gammas is not None:
            if len(self.gammas) != self.c:
                raise ValueError(f"gammas must have c={self.c} entries, got {len(self.gammas)}")
            if any(not 0.0 <= g <= 1.0 for g in self.gammas):
                raise ValueError("gammas must lie in [0, 1]")
        return self

    def gate_vector(self) -> Tuple[float, ...]:
        return self.gammas if self.gammas is not None else (1.0,) * self.c

    def gates_for(self, length: int) -> Tuple[float, ...]:
        """Gates aligned to a window of ``length`` pairs, oldest first."""
        if length > self.c:
            raise ShapeError(f"window of {length} pairs exceeds c={self.c}")
        gates = self.gate_vector()
        return gates[self.c - length:]


def omega_loss_grad(
    memory: MemoryState, window: Window, loss: WindowLoss
) -> Tuple[float, GradState]:
    """Gate-weighted sum of per-pair losses and gradients over the window."""
    total = 0.0
    grad = GradState.zeros_like(memory)
    if not window:
        return total, grad

    pair_grad = LOSS_GRADS[loss.base]
    for (phi, v), gamma in zip(window, loss.gates_for(len(window))):
        if gamma == 0.0:
            continue
        value, g = pair_grad(memory, phi, v)
        total += gamma * value
        grad = grad + (g if gamma == 1.0 else g.scale(gamma))
    return total, grad


def descent_direction(base: LossBase, grad: GradState) -> GradState:
    """Direction D such that a rule step is M <- alpha M - eta D.

    l2 rules descend on half the squared error; dot rules ascend the
    similarity.
    """
    if base == "l2":
        return grad.scale(0.5)
    return grad.scale(-1.0)
