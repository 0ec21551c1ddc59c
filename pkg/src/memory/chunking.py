"""Chunk-parallel evaluation of the windowed rules.

Within a chunk of b tokens every window gradient is taken at the memory
state at the chunk boundary, so the b per-token gradients are independent
and are aggregated with one banded, gate-weighted contraction. The in-chunk
recurrence M_t = alpha_t M_{t-1} - eta_t D_t is then unrolled with decay
products prod_{s=n+1..t} alpha_s. With b = 1 the result equals the
sequential rules.
"""

from dataclasses import replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field

from ..core.errors import RuleError, ShapeError
from ..core.logging import get_logger
from ..workers.pool import parallel_map
from .arch import LOSS_GRADS, GradState, MemoryState
from .feature_maps import apply_poly
from .linalg import Mat, Vec, as_vec, newton_schulz
from .objectives import LossBase
from .rules import GateSchedule, Gates, RuleState, Token, read_out, resolve_gates

logger = get_logger(__name__)


class ChunkPlan(BaseModel):
    """Chunk size b and window length c."""

    model_config = ConfigDict(frozen=True)

    b: int = Field(default=1, ge=1, description="Chunk size")
    c: int = Field(default=1, ge=1, description="Window length")

    @property
    def mask(self) -> Mat:
        return build_window_mask(self.b, self.c)

    def chunks(self, length: int) -> List[Tuple[int, int]]:
        """(start, stop) token ranges covering ``length`` tokens."""
        return [(s, min(s + self.b, length)) for s in range(0, length, self.b)]


def build_window_mask(b: int, c: int) -> Mat:
    """Band mask: entry (i, j) is 1 iff 0 <= i - j < c."""
    if b < 0 or c < 1:
        raise ValueError(f"mask needs b >= 0 and c >= 1, got b={b}, c={c}")
    rows, cols = np.indices((b, b))
    offset = rows - cols
    return ((offset >= 0) & (offset < c)).astype(np.float64)


def decay_matrix(factors: ArrayLike) -> Mat:
    """Lower-triangular D[t, n] = prod_{s=n+1..t} factors[s] (D[t, t] = 1)."""
    f = np.asarray(factors, dtype=np.float64)
    b = f.shape[0]
    out = np.zeros((b, b))
    for t in range(b):
        acc = 1.0
        out[t, t] = 1.0
        for n in range(t - 1, -1, -1):
            acc *= f[n + 1]
            out[t, n] = acc
    return out


def prefix_decay(factors: ArrayLike) -> Vec:
    """P[t] = prod_{s=0..t} factors[s]."""
    return np.cumprod(np.asarray(factors, dtype=np.float64))


def expand_momentum(
    grads: ArrayLike,
    thetas: ArrayLike,
    etas: ArrayLike,
    s0: ArrayLike,
) -> np.ndarray:
    """Closed form of S_t = theta_t S_{t-1} - eta_t u_t for t = 1..b.

    Args:
        grads: Stacked u_t, shape (b, ...)
        thetas: Momentum decays, length b
        etas: Step sizes, length b
        s0: Momentum before the first step, shape (...)

    Returns:
        Stacked S_t, shape (b, ...)
    """
    g = np.asarray(grads, dtype=np.float64)
    s0 = np.asarray(s0, dtype=np.float64)
    thetas = np.asarray(thetas, dtype=np.float64)
    etas = np.asarray(etas, dtype=np.float64)
    b = g.shape[0]
    if thetas.shape != (b,) or etas.shape != (b,):
        raise ShapeError(f"thetas and etas must have length {b}")
    if g.shape[1:] != s0.shape:
        raise ShapeError(f"gradient shape {g.shape[1:]} differs from momentum shape {s0.shape}")
    if b == 0:
        return np.zeros((0,) + s0.shape)
    weights = decay_matrix(thetas) * etas[None, :]
    carry = prefix_decay(thetas).reshape((b,) + (1,) * s0.ndim) * s0
    return carry - np.einsum("ti,i...->t...", weights, g)


def _gate_rows(gates: Sequence[Gates], c: int, windowed: bool = True) -> Mat:
    rows = np.ones((len(gates), c))
    if windowed:
        for r, g in enumerate(gates):
            if g.gammas is not None:
                if len(g.gammas) != c:
                    raise ValueError(f"gammas must have c={c} entries, got {len(g.gammas)}")
                rows[r] = g.gammas
    return rows


def _window_gradients(
    memory: MemoryState,
    history: Sequence[Tuple[Vec, Vec]],
    start: int,
    gates: Sequence[Gates],
    c: int,
    base: LossBase,
    windowed: bool = True,
) -> Tuple[Vec, List[np.ndarray]]:
    """Window-aggregated losses and gradients for one chunk, all at ``memory``.

    ``history`` holds every (lifted key, value) pair seen so far; the chunk
    occupies history[start:start + len(gates)].
    """
    nb = len(gates)
    lo = max(0, start - (c - 1))
    context = history[lo:start + nb]
    lead = start - lo

    pair_grad = LOSS_GRADS[base]
    per_pair = parallel_map(lambda pair: pair_grad(memory, pair[0], pair[1]), context)
    losses = np.array([loss for loss, _ in per_pair])

    mask = build_window_mask(lead + nb, c)[lead:, :]
    offsets = (np.arange(nb)[:, None] + lead) - np.arange(len(context))[None, :]
    gate_index = np.clip(c - 1 - offsets, 0, c - 1)
    weights = mask * np.take_along_axis(_gate_rows(gates, c, windowed), gate_index, axis=1)

    aggregated = []
    for j in range(len(memory.weights)):
        stacked = np.stack([g.grads[j] for _, g in per_pair])
        aggregated.append(np.einsum("rj,j...->r...", weights, stacked))
    return weights @ losses, aggregated


def _unroll(
    memory: MemoryState,
    alphas: Vec,
    coefs: Vec,
    directions: Sequence[np.ndarray],
) -> List[MemoryState]:
    """States M_t = alpha_t M_{t-1} + coef_t D_t for every chunk position."""
    nb = alphas.shape[0]
    weights = decay_matrix(alphas) * coefs[None, :]
    carry = prefix_decay(alphas)
    per_weight = []
    for w, d in zip(memory.weights, directions):
        per_weight.append(
            carry.reshape((nb,) + (1,) * w.ndim) * w + np.einsum("rn,n...->r...", weights, d)
        )
    return [memory.with_weights([pw[r] for pw in per_weight]) for r in range(nb)]


ChunkUpdate = Callable[
    [RuleState, List[np.ndarray], Sequence[Gates]],
    Tuple[List[MemoryState], Optional[GradState]],
]


def _run_chunks(
    stream: Sequence[Token],
    plan: ChunkPlan,
    state: RuleState,
    schedule: Optional[GateSchedule],
    base: LossBase,
    update: ChunkUpdate,
    windowed: bool = True,
) -> Tuple[List[Vec], RuleState]:
    tokens = list(stream)
    if plan.c != state.window_size:
        raise RuleError(f"chunk plan window c={plan.c} differs from state window {state.window_size}")
    if not tokens:
        return [], state

    history = list(state.window) + [
        (apply_poly(state.feature_map, tok.k), as_vec(tok.v, "v")) for tok in tokens
    ]
    offset = len(state.window)
    gates = [resolve_gates(t, tok, schedule) for t, tok in enumerate(tokens)]

    outputs: List[Vec] = []
    losses: Vec = np.zeros(0)
    for start, stop in plan.chunks(len(tokens)):
        chunk_gates = gates[start:stop]
        losses, grads = _window_gradients(
            state.memory, history, offset + start, chunk_gates, plan.c, base, windowed
        )
        memories, momentum = update(state, grads, chunk_gates)
        for r, memory in enumerate(memories):
            tok = tokens[start + r]
            state = replace(state, memory=memory)
            outputs.append(read_out(state, tok.q if tok.q is not None else tok.k))
        if momentum is not None:
            state = replace(state, momentum=momentum)

    window = tuple(history[-state.window_size:])
    state = replace(
        state, window=window, last_loss=float(losses[-1]), step=state.step + len(tokens)
    )
    logger.debug("Chunked pass finished", tokens=len(tokens), b=plan.b, c=plan.c)
    return outputs, state


def _descent(base: LossBase, grads: List[np.ndarray]) -> List[np.ndarray]:
    factor = 0.5 if base == "l2" else -1.0
    return [factor * g for g in grads]


def chunked_omega(
    stream: Sequence[Token],
    plan: ChunkPlan,
    state: RuleState,
    schedule: Optional[GateSchedule] = None,
    base: LossBase = "l2",
) -> Tuple[List[Vec], RuleState]:
    """Omega (base l2) or sliding-window linear attention (base dot) in chunks."""

    def update(rs: RuleState, grads, chunk_gates):
        alphas = np.array([g.alpha for g in chunk_gates])
        etas = np.array([g.eta for g in chunk_gates])
        return _unroll(rs.memory, alphas, -etas, _descent(base, grads)), None

    return _run_chunks(stream, plan, state, schedule, base, update)


def chunked_titans(
    stream: Sequence[Token],
    plan: ChunkPlan,
    state: RuleState,
    schedule: Optional[GateSchedule] = None,
) -> Tuple[List[Vec], RuleState]:
    """Momentum GD in chunks: S_t = eta_t S_{t-1} - theta_t u_t, M_t = alpha_t M_{t-1} + S_t."""
    if state.momentum is None:
        raise RuleError("titans state carries no momentum")

    def update(rs: RuleState, grads, chunk_gates):
        alphas = np.array([g.alpha for g in chunk_gates])
        decays = np.array([g.eta for g in chunk_gates])
        steps = np.array([g.theta for g in chunk_gates])
        surprise = _descent("l2", grads)
        momenta = [
            expand_momentum(u, decays, steps, s0) for u, s0 in zip(surprise, rs.momentum.grads)
        ]
        memories = _unroll(rs.memory, alphas, np.ones_like(alphas), momenta)
        return memories, GradState(tuple(m[-1] for m in momenta))

    return _run_chunks(stream, plan, state, schedule, "l2", update, windowed=False)


def chunked_atlas(
    stream: Sequence[Token],
    plan: ChunkPlan,
    state: RuleState,
    schedule: Optional[GateSchedule] = None,
    ns_k: int = 5,
) -> Tuple[List[Vec], RuleState]:
    """Atlas in chunks: momentum expanded in closed form, then Newton-Schulz per state."""
    if state.momentum is None:
        raise RuleError("atlas state carries no momentum")

    def update(rs: RuleState, grads, chunk_gates):
        nb = len(chunk_gates)
        alphas = np.array([g.alpha for g in chunk_gates])
        etas = np.array([g.eta for g in chunk_gates])
        thetas = np.array([g.theta for g in chunk_gates])
        directions = _descent("l2", grads)
        momenta = [
            expand_momentum(-d, thetas, np.ones(nb), s0)
            for d, s0 in zip(directions, rs.momentum.grads)
        ]
        jobs = [(j, r) for j in range(len(momenta)) for r in range(nb)]
        flat = parallel_map(lambda job: newton_schulz(momenta[job[0]][job[1]], ns_k), jobs)
        orthogonal = [np.stack(flat[j * nb:(j + 1) * nb]) for j in range(len(momenta))]
        memories = _unroll(rs.memory, alphas, -etas, orthogonal)
        return memories, GradState(tuple(m[-1] for m in momenta))

    return _run_chunks(stream, plan, state, schedule, "l2", update)
