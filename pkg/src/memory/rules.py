"""Sequential memory update rules.

Each stepper takes the current ``RuleState`` and one (key, value) pair and
returns a new state; the input state is never modified. Keys are lifted by
the state's feature map before they reach the memory.

Sign conventions:

- l2 rules descend on 1/2 ||M(phi(k)) - v||^2, so the delta rule with step
  eta is M <- alpha M - eta (M phi - v) phi^T on matrix memory.
- dot rules (hebbian, dla, swla, deeptransformer) move along
  +grad <M(phi(k)), v>, i.e. M <- alpha M + eta v phi^T on matrix memory.
- titans uses eta as the momentum decay and theta as the gradient scale:
  S <- eta S - theta grad, M <- alpha M + S.
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from ..core.errors import RuleError
from ..core.logging import get_logger
from ..models.pydantic.records import RunRecord
from ..workers.pool import parallel_map
from .arch import GradState, MemoryState, forward
from .feature_maps import FeatureMapSpec, apply_poly
from .linalg import Mat, Vec, as_vec, newton_schulz
from .objectives import LossBase, WindowLoss, descent_direction, omega_loss_grad

logger = get_logger(__name__)

RULE_NAMES: Tuple[str, ...] = (
    "hebbian",
    "delta",
    "titans",
    "omega",
    "atlas",
    "dla",
    "swla",
    "deeptransformer",
    "dot",
)
MOMENTUM_RULES = frozenset({"titans", "atlas"})
WINDOWED_RULES = frozenset({"omega", "atlas", "swla", "dot"})
EXP_MAP_RULES = frozenset({"deeptransformer", "dot"})
CLOSED_FORM_RULES = frozenset({"hebbian", "delta", "omega", "dla", "swla", "deeptransformer", "dot"})

RULE_BASE: Dict[str, LossBase] = {
    "hebbian": "dot",
    "delta": "l2",
    "titans": "l2",
    "omega": "l2",
    "atlas": "l2",
    "dla": "dot",
    "swla": "dot",
    "deeptransformer": "dot",
    "dot": "l2",
}


@dataclass(frozen=True)
class Gates:
    """Per-step gate values."""

    alpha: float = 1.0
    eta: float = 1.0
    theta: float = 0.0
    gammas: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (self.eta >= 0.0 and math.isfinite(self.eta)):
            raise ValueError(f"eta must be finite and >= 0, got {self.eta}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.gammas is not None and any(not 0.0 <= g <= 1.0 for g in self.gammas):
            raise ValueError("gammas must lie in [0, 1]")


@dataclass(frozen=True)
class Token:
    """One stream element; ``q`` defaults to ``k`` and ``gates`` to the schedule."""

    k: Vec
    v: Vec
    q: Optional[Vec] = None
    gates: Optional[Gates] = None


class GateSchedule(ABC):
    """Source of per-step gates."""

    @abstractmethod
    def gates_at(self, t: int, token: Token) -> Gates:
        """Gates for step ``t`` (0-based) given its token."""


@dataclass(frozen=True)
class ConstantGates(GateSchedule):
    gates: Gates = field(default_factory=Gates)

    def gates_at(self, t: int, token: Token) -> Gates:
        return self.gates


@dataclass(frozen=True)
class ScheduledGates(GateSchedule):
    """Per-step arrays; every supplied sequence must cover the stream."""

    alphas: Optional[Sequence[float]] = None
    etas: Optional[Sequence[float]] = None
    thetas: Optional[Sequence[float]] = None
    gammas: Optional[Sequence[Tuple[float, ...]]] = None

    def gates_at(self, t: int, token: Token) -> Gates:
        try:
            return Gates(
                alpha=1.0 if self.alphas is None else float(self.alphas[t]),
                eta=1.0 if self.etas is None else float(self.etas[t]),
                theta=0.0 if self.thetas is None else float(self.thetas[t]),
                gammas=None if self.gammas is None else tuple(self.gammas[t]),
            )
        except IndexError as exc:
            raise ValueError(f"gate schedule has no entry for step {t}") from exc


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


@dataclass(frozen=True)
class TokenSigmoidGates(GateSchedule):
    """Data-dependent gates sigmoid(w . k + b); eta is scaled by ``eta_max``."""

    w_alpha: Vec
    w_eta: Vec
    w_theta: Optional[Vec] = None
    b_alpha: float = 0.0
    b_eta: float = 0.0
    b_theta: float = 0.0
    eta_max: float = 1.0

    def gates_at(self, t: int, token: Token) -> Gates:
        k = as_vec(token.k, "k")
        theta = 0.0 if self.w_theta is None else _sigmoid(float(self.w_theta @ k) + self.b_theta)
        return Gates(
            alpha=_sigmoid(float(self.w_alpha @ k) + self.b_alpha),
            eta=self.eta_max * _sigmoid(float(self.w_eta @ k) + self.b_eta),
            theta=theta,
        )


@dataclass(frozen=True)
class InverseNormGates(GateSchedule):
    """eta_t = scale / ||phi(k_t)||^2, the one-shot exact delta step."""

    feature_map: FeatureMapSpec = field(default_factory=FeatureMapSpec)
    scale: float = 1.0
    alpha: float = 1.0
    theta: float = 0.0
    gammas: Optional[Tuple[float, ...]] = None

    def gates_at(self, t: int, token: Token) -> Gates:
        phi = apply_poly(self.feature_map, token.k)
        sq = float(phi @ phi)
        eta = self.scale / sq if sq > 0.0 else 0.0
        return Gates(alpha=self.alpha, eta=eta, theta=self.theta, gammas=self.gammas)


@dataclass(frozen=True)
class RuleState:
    """Memory plus the bookkeeping a rule carries between steps.

    ``momentum`` is present exactly for momentum rules; ``window`` holds the
    most recent ``window_size`` (lifted key, value) pairs, oldest first.
    """

    memory: MemoryState
    feature_map: FeatureMapSpec = field(default_factory=FeatureMapSpec)
    window_size: int = 1
    momentum: Optional[GradState] = None
    window: Tuple[Tuple[Vec, Vec], ...] = ()
    last_loss: float = 0.0
    step: int = 0

    def pushed(self, phi: Vec, v: Vec) -> Tuple[Tuple[Vec, Vec], ...]:
        return (self.window + ((phi, v),))[-self.window_size:]


def init_rule_state(
    rule: str,
    memory: MemoryState,
    feature_map: Optional[FeatureMapSpec] = None,
    window_size: int = 1,
) -> RuleState:
    """Fresh state for ``rule`` around ``memory``."""
    if rule not in RULE_NAMES:
        raise RuleError(f"unknown rule '{rule}'; valid rules: {', '.join(RULE_NAMES)}")
    fmap = feature_map or FeatureMapSpec.identity()
    if window_size < 1:
        raise ValueError(f"window size must be >= 1, got {window_size}")
    if rule not in WINDOWED_RULES and window_size != 1:
        raise RuleError(f"{rule} is an online rule (window size 1)")
    if rule in EXP_MAP_RULES and fmap.kind != "exp_truncated":
        raise RuleError(f"{rule} needs an exp_truncated feature map, got {fmap.kind}")
    momentum = GradState.zeros_like(memory) if rule in MOMENTUM_RULES else None
    return RuleState(memory=memory, feature_map=fmap, window_size=window_size, momentum=momentum)


def _lift(rs: RuleState, k: ArrayLike, v: ArrayLike) -> Tuple[Vec, Vec]:
    return apply_poly(rs.feature_map, k), as_vec(v, "v")


def _window_loss(rs: RuleState, gates: Gates, base: LossBase, windowed: bool) -> WindowLoss:
    # online rules have no window gate
    gammas = gates.gammas if windowed else None
    return WindowLoss(c=rs.window_size, gammas=gammas, base=base)


def _gd_step(rs: RuleState, window, gates: Gates, base: LossBase,
             windowed: bool = False) -> RuleState:
    loss, grad = omega_loss_grad(rs.memory, window, _window_loss(rs, gates, base, windowed))
    memory = rs.memory.scaled_add(gates.alpha, -gates.eta, descent_direction(base, grad))
    return replace(rs, memory=memory, window=window, last_loss=loss, step=rs.step + 1)


def _matrix(rs: RuleState, rule: str) -> Mat:
    if rs.memory.arch != "matrix":
        raise RuleError(f"closed-form {rule} needs matrix memory, got {rs.memory.arch}")
    return rs.memory.weights[0]


def _window_arrays(rs: RuleState, window, gates: Gates,
                   windowed: bool) -> Tuple[Mat, Mat, Vec]:
    phis = np.stack([phi for phi, _ in window], axis=1)
    values = np.stack([v for _, v in window], axis=1)
    gammas = np.asarray(_window_loss(rs, gates, "l2", windowed).gates_for(len(window)))
    return phis, values, gammas


def _closed_dot(rs: RuleState, window, gates: Gates, windowed: bool = False) -> RuleState:
    w = _matrix(rs, "dot-product rule")
    phis, values, gammas = _window_arrays(rs, window, gates, windowed)
    loss = float(np.sum(gammas * np.sum((w @ phis) * values, axis=0)))
    new_w = gates.alpha * w + gates.eta * (values * gammas) @ phis.T
    return replace(rs, memory=rs.memory.with_weights([new_w]), window=window,
                   last_loss=loss, step=rs.step + 1)


def _closed_l2(rs: RuleState, window, gates: Gates, windowed: bool = False) -> RuleState:
    w = _matrix(rs, "regression rule")
    phis, values, gammas = _window_arrays(rs, window, gates, windowed)
    resid = w @ phis - values
    loss = float(np.sum(gammas * np.sum(resid * resid, axis=0)))
    eye = np.eye(w.shape[1])
    new_w = w @ (gates.alpha * eye - gates.eta * (phis * gammas) @ phis.T) \
        + gates.eta * (values * gammas) @ phis.T
    return replace(rs, memory=rs.memory.with_weights([new_w]), window=window,
                   last_loss=loss, step=rs.step + 1)


def _require_exp(rs: RuleState, rule: str) -> None:
    if rs.feature_map.kind != "exp_truncated":
        raise RuleError(f"{rule} needs an exp_truncated feature map, got {rs.feature_map.kind}")


def step_hebbian(rs: RuleState, k: ArrayLike, v: ArrayLike, gates: Gates,
                 closed_form: bool = False) -> RuleState:
    """M <- alpha M + eta v phi(k)^T (generic path: similarity ascent)."""
    phi, v = _lift(rs, k, v)
    window = rs.pushed(phi, v)
    if closed_form:
        return _closed_dot(rs, window, gates)
    return _gd_step(rs, window, gates, "dot")


def step_delta(rs: RuleState, k: ArrayLike, v: ArrayLike, gates: Gates,
               closed_form: bool = False) -> RuleState:
    """M <- M (alpha I - eta phi phi^T) + eta v phi^T."""
    phi, v = _lift(rs, k, v)
    window = rs.pushed(phi, v)
    if closed_form:
        return _closed_l2(rs, window, gates)
    return _gd_step(rs, window, gates, "l2")


def step_titans(rs: RuleState, k: ArrayLike, v: ArrayLike, gates: Gates) -> RuleState:
    """Momentum GD on the l2 objective of the newest pair."""
    if rs.momentum is None:
        raise RuleError("titans state carries no momentum")
    phi, v = _lift(rs, k, v)
    window = rs.pushed(phi, v)
    loss, grad = omega_loss_grad(rs.memory, window, _window_loss(rs, gates, "l2", windowed=False))
    surprise = descent_direction("l2", grad)
    momentum = rs.momentum.scale(gates.eta) + surprise.scale(-gates.theta)
    memory = rs.memory.scaled_add(gates.alpha, 1.0, momentum)
    return replace(rs, memory=memory, momentum=momentum, window=window,
                   last_loss=loss, step=rs.step + 1)


def step_omega(rs: RuleState, k: ArrayLike, v: ArrayLike, gates: Gates,
               closed_form: bool = False) -> RuleState:
    """GD on the gated l2 objective over the last c pairs."""
    phi, v = _lift(rs, k, v)
    window = rs.pushed(phi, v)
    if closed_form:
        return _closed_l2(rs, window, gates, windowed=True)
    return _gd_step(rs, window, gates, "l2", windowed=True)


def orthogonalize(update: GradState, ns_k: int) -> GradState:
    """Newton-Schulz applied to every weight matrix independently."""
    return GradState(tuple(parallel_map(lambda s: newton_schulz(s, ns_k), update.grads)))


def step_atlas(rs: RuleState, k: ArrayLike, v: ArrayLike, gates: Gates,
               ns_k: int = 5) -> RuleState:
    """S <- theta S + window gradient; M <- alpha M - eta NS_k(S)."""
    if rs.momentum is None:
        raise RuleError("atlas state carries no momentum")
    phi, v = _lift(rs, k, v)
    window = rs.pushed(phi, v)
    loss, grad = omega_loss_grad(rs.memory, window, _window_loss(rs, gates, "l2", windowed=True))
    momentum = rs.momentum.scale(gates.theta) + descent_direction("l2", grad)
    memory = rs.memory.scaled_add(gates.alpha, -gates.eta, orthogonalize(momentum, ns_k))
    return replace(rs, memory=memory, momentum=momentum, window=window,
                   last_loss=loss, step=rs.step + 1)


def step_dla(rs: RuleState, k: ArrayLike, v: ArrayLike, gates: Gates,
             closed_form: bool = False) -> RuleState:
    """Dot-loss GD on a (typically deep) memory."""
    phi, v = _lift(rs, k, v)
    window = rs.pushed(phi, v)
    if closed_form:
        return _closed_dot(rs, window, gates)
    return _gd_step(rs, window, gates, "dot")


def step_swla(rs: RuleState, k: ArrayLike, v: ArrayLike, gates: Gates,
              closed_form: bool = False) -> RuleState:
    """Windowed dot loss: M <- alpha M + eta sum_i gamma_i v_i phi_i^T."""
    phi, v = _lift(rs, k, v)
    window = rs.pushed(phi, v)
    if closed_form:
        return _closed_dot(rs, window, gates, windowed=True)
    return _gd_step(rs, window, gates, "dot", windowed=True)


def step_deeptransformer(rs: RuleState, k: ArrayLike, v: ArrayLike, gates: Gates,
                         closed_form: bool = False) -> RuleState:
    """Hebbian rule in the truncated-exponential feature space."""
    _require_exp(rs, "deeptransformer")
    return step_hebbian(rs, k, v, gates, closed_form=closed_form)


def step_dot(rs: RuleState, k: ArrayLike, v: ArrayLike, gates: Gates,
             closed_form: bool = False) -> RuleState:
    """Omega rule in the truncated-exponential feature space."""
    _require_exp(rs, "dot")
    return step_omega(rs, k, v, gates, closed_form=closed_form)


RULES: Dict[str, Callable[..., RuleState]] = {
    "hebbian": step_hebbian,
    "delta": step_delta,
    "titans": step_titans,
    "omega": step_omega,
    "atlas": step_atlas,
    "dla": step_dla,
    "swla": step_swla,
    "deeptransformer": step_deeptransformer,
    "dot": step_dot,
}


def apply_rule(
    rule: str,
    rs: RuleState,
    k: ArrayLike,
    v: ArrayLike,
    gates: Gates,
    *,
    ns_k: int = 5,
    closed_form: bool = False,
) -> RuleState:
    """Dispatch one step of ``rule``."""
    if rule not in RULES:
        raise RuleError(f"unknown rule '{rule}'; valid rules: {', '.join(RULE_NAMES)}")
    if rule == "atlas":
        if closed_form:
            raise RuleError("atlas has no closed form")
        return step_atlas(rs, k, v, gates, ns_k=ns_k)
    if rule == "titans":
        if closed_form:
            raise RuleError("titans has no closed form")
        return step_titans(rs, k, v, gates)
    return RULES[rule](rs, k, v, gates, closed_form=closed_form)


def resolve_gates(t: int, token: Token, schedule: Optional[GateSchedule]) -> Gates:
    if token.gates is not None:
        return token.gates
    if schedule is not None:
        return schedule.gates_at(t, token)
    return Gates()


def read_out(rs: RuleState, q: ArrayLike) -> Vec:
    """Retrieve M(phi(q))."""
    return forward(rs.memory, apply_poly(rs.feature_map, q))


def run_sequence(
    rule: str,
    stream: Sequence[Token],
    state: RuleState,
    *,
    schedule: Optional[GateSchedule] = None,
    ns_k: int = 5,
    closed_form: bool = False,
    record: Optional[RunRecord] = None,
) -> Tuple[List[Vec], RuleState]:
    """Apply ``rule`` token by token; y_t is read after the step-t update.

    Args:
        rule: Rule name from ``RULE_NAMES``
        stream: Tokens in order
        state: Initial state (left untouched)
        schedule: Gate source for tokens without explicit gates
        ns_k: Newton-Schulz steps for atlas
        closed_form: Use the matrix closed forms where defined
        record: Optional run record receiving (step, loss) rows

    Returns:
        Outputs per token and the final state
    """
    outputs: List[Vec] = []
    for t, token in enumerate(stream):
        gates = resolve_gates(t, token, schedule)
        state = apply_rule(rule, state, token.k, token.v, gates, ns_k=ns_k, closed_form=closed_form)
        outputs.append(read_out(state, token.q if token.q is not None else token.k))
        if record is not None:
            record.add(step=t, loss=state.last_loss)
    logger.debug("Sequence processed", rule=rule, tokens=len(outputs))
    return outputs, state
