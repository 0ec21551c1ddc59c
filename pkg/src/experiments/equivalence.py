"""Named numerical equivalence checks.

Each check builds a small seeded problem, computes the same quantity two
independent ways and returns the largest absolute difference. The runner
compares it against the check's tolerance.
"""

from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.logging import get_logger
from ..memory.arch import MemoryState, grad_dot, grad_l2, init_memory
from ..memory.attention import AttnBatch, unnormalized_exp_attention
from ..memory.chunking import ChunkPlan, chunked_atlas, chunked_omega, chunked_titans, expand_momentum
from ..memory.feature_maps import FeatureMapSpec, apply_poly, lifted_dim
from ..memory.gradcheck import max_relative_error, numerical_grad
from ..memory.linalg import Mat, Vec, newton_schulz, polar_factor
from ..memory.objectives import WindowLoss, descent_direction, omega_loss_grad
from ..memory.rules import (
    RULE_BASE,
    WINDOWED_RULES,
    Gates,
    RuleState,
    Token,
    init_rule_state,
    orthogonalize,
    read_out,
    run_sequence,
)
from ..utils.performance_decorators import monitor_performance

logger = get_logger(__name__)


@dataclass(frozen=True)
class CheckContext:
    """Problem sizes shared by the checks."""

    seed: int = 0
    n_tokens: int = 64
    chunk_size: int = 1
    d_k: int = 6
    d_v: int = 6
    window: int = 3
    ns_k: int = 5


@dataclass(frozen=True)
class EquivalenceCheck:
    name: str
    tol: float
    rules: Tuple[str, ...]
    run: Callable[[CheckContext], float]
    chunked_tol: Optional[float] = None

    def tol_for(self, ctx: CheckContext) -> float:
        """Looser bound once chunks hold more than one token."""
        if ctx.chunk_size > 1 and self.chunked_tol is not None:
            return self.chunked_tol
        return self.tol


def random_stream(rng: np.random.Generator, n: int, d_k: int, d_v: int) -> List[Token]:
    """Tokens with unit keys and queries and Gaussian values."""
    def unit(size: int) -> Vec:
        x = rng.standard_normal(size)
        return x / np.linalg.norm(x)

    return [Token(k=unit(d_k), v=rng.standard_normal(d_v), q=unit(d_k)) for _ in range(n)]


def random_gates(
    rng: np.random.Generator, n: int, c: int, momentum: bool = False
) -> List[Gates]:
    """Gates in stable ranges; gammas only when c > 1."""
    gates = []
    for _ in range(n):
        gammas = tuple(rng.uniform(0.5, 1.0, size=c)) if c > 1 else None
        gates.append(
            Gates(
                alpha=float(rng.uniform(0.9, 1.0)),
                eta=float(rng.uniform(0.5, 0.9) if momentum else rng.uniform(0.05, 0.2)),
                theta=float(rng.uniform(0.05, 0.2) if momentum else rng.uniform(0.5, 0.9)),
                gammas=gammas,
            )
        )
    return gates


def with_gates(stream: Sequence[Token], gates: Sequence[Gates]) -> List[Token]:
    return [replace(tok, gates=g) for tok, g in zip(stream, gates)]


def conditioned_matrix(
    rng: np.random.Generator, m: int, n: int, lo: float = 0.5, hi: float = 2.0
) -> Mat:
    """Random full-rank matrix with singular values drawn from [lo, hi]."""
    r = min(m, n)
    u, _ = np.linalg.qr(rng.standard_normal((m, r)))
    v, _ = np.linalg.qr(rng.standard_normal((n, r)))
    return (u * rng.uniform(lo, hi, size=r)) @ v.T


def frozen_reference(
    rule: str,
    stream: Sequence[Token],
    plan: ChunkPlan,
    state: RuleState,
    ns_k: int = 5,
) -> Tuple[List[Vec], RuleState]:
    """Token-by-token loop whose gradients are frozen at each chunk's start state."""
    base = RULE_BASE[rule]
    outputs: List[Vec] = []
    boundary: MemoryState = state.memory
    for t, tok in enumerate(stream):
        if t % plan.b == 0:
            boundary = state.memory
        gates = tok.gates or Gates()
        phi = apply_poly(state.feature_map, tok.k)
        window = state.pushed(phi, np.asarray(tok.v, dtype=np.float64))
        gammas = gates.gammas if rule in WINDOWED_RULES else None
        loss, grad = omega_loss_grad(
            boundary, window, WindowLoss(c=state.window_size, gammas=gammas, base=base)
        )
        direction = descent_direction(base, grad)
        if rule == "titans":
            momentum = state.momentum.scale(gates.eta) + direction.scale(-gates.theta)
            memory = state.memory.scaled_add(gates.alpha, 1.0, momentum)
            state = replace(state, momentum=momentum)
        elif rule == "atlas":
            momentum = state.momentum.scale(gates.theta) + direction
            memory = state.memory.scaled_add(gates.alpha, -gates.eta, orthogonalize(momentum, ns_k))
            state = replace(state, momentum=momentum)
        else:
            memory = state.memory.scaled_add(gates.alpha, -gates.eta, direction)
        state = replace(state, memory=memory, window=window, last_loss=loss, step=state.step + 1)
        outputs.append(read_out(state, tok.q if tok.q is not None else tok.k))
    return outputs, state


def _max_diff(a: Sequence[np.ndarray], b: Sequence[np.ndarray]) -> float:
    if len(a) != len(b):
        return float("inf")
    return max((float(np.max(np.abs(x - y))) for x, y in zip(a, b)), default=0.0)


def _compare_runs(out_a, state_a: RuleState, out_b, state_b: RuleState) -> float:
    return max(_max_diff(out_a, out_b), _max_diff([state_a.memory.flat()], [state_b.memory.flat()]))


def _chunk_check(rule: str) -> Callable[[CheckContext], float]:
    engines = {"omega": chunked_omega, "titans": chunked_titans, "atlas": chunked_atlas}

    def run(ctx: CheckContext) -> float:
        rng = np.random.default_rng(ctx.seed)
        c = 1 if rule == "titans" else ctx.window
        stream = with_gates(
            random_stream(rng, ctx.n_tokens, ctx.d_k, ctx.d_v),
            random_gates(rng, ctx.n_tokens, c, momentum=rule == "titans"),
        )
        state = init_rule_state(rule, init_memory("matrix", ctx.d_k, ctx.d_v), window_size=c)
        plan = ChunkPlan(b=ctx.chunk_size, c=c)
        kwargs = {"ns_k": ctx.ns_k} if rule == "atlas" else {}
        out_chunk, st_chunk = engines[rule](stream, plan, state, **kwargs)
        if plan.b == 1:
            out_ref, st_ref = run_sequence(rule, stream, state, ns_k=ctx.ns_k)
        else:
            out_ref, st_ref = frozen_reference(rule, stream, plan, state, ns_k=ctx.ns_k)
        return _compare_runs(out_chunk, st_chunk, out_ref, st_ref)

    return run


def _reduction_check(general: str, special: str) -> Callable[[CheckContext], float]:
    def run(ctx: CheckContext) -> float:
        rng = np.random.default_rng(ctx.seed)
        stream = with_gates(
            random_stream(rng, ctx.n_tokens, ctx.d_k, ctx.d_v),
            random_gates(rng, ctx.n_tokens, 1),
        )
        memory = init_memory("matrix", ctx.d_k, ctx.d_v)
        out_a, st_a = run_sequence(general, stream, init_rule_state(general, memory))
        out_b, st_b = run_sequence(special, stream, init_rule_state(special, memory))
        return _compare_runs(out_a, st_a, out_b, st_b)

    return run


def _closed_form_check(rule: str) -> Callable[[CheckContext], float]:
    def run(ctx: CheckContext) -> float:
        rng = np.random.default_rng(ctx.seed)
        exp_rule = rule in ("dot", "deeptransformer")
        d_k = 3 if exp_rule else ctx.d_k
        fmap = FeatureMapSpec.exp_truncated(2) if exp_rule else FeatureMapSpec.identity()
        c = ctx.window if rule in ("omega", "swla", "dot") else 1
        n = ctx.n_tokens
        stream = with_gates(random_stream(rng, n, d_k, ctx.d_v), random_gates(rng, n, c))
        state = init_rule_state(
            rule, init_memory("matrix", lifted_dim(fmap, d_k), ctx.d_v), fmap, window_size=c
        )
        out_a, st_a = run_sequence(rule, stream, state)
        out_b, st_b = run_sequence(rule, stream, state, closed_form=True)
        return _compare_runs(out_a, st_a, out_b, st_b)

    return run


def _momentum_check(ctx: CheckContext) -> float:
    rng = np.random.default_rng(ctx.seed)
    b = max(ctx.chunk_size, 8)
    grads = rng.standard_normal((b, ctx.d_v, ctx.d_k))
    thetas = rng.uniform(0.0, 1.0, size=b)
    etas = rng.uniform(0.0, 1.0, size=b)
    s0 = rng.standard_normal((ctx.d_v, ctx.d_k))
    closed = expand_momentum(grads, thetas, etas, s0)
    s = s0
    unrolled = []
    for t in range(b):
        s = thetas[t] * s - etas[t] * grads[t]
        unrolled.append(s)
    return _max_diff(list(closed), unrolled)


def _newton_schulz_check(ctx: CheckContext) -> float:
    rng = np.random.default_rng(ctx.seed)
    s = conditioned_matrix(rng, 6, 4)
    return float(np.max(np.abs(newton_schulz(s, 20) - polar_factor(s))))


def _gradient_check(ctx: CheckContext) -> float:
    rng = np.random.default_rng(ctx.seed)
    d = 4
    worst = 0.0
    for arch in ("matrix", "mlp2", "gated_mlp", "stackL"):
        memory = init_memory(arch, d, d, seed=ctx.seed, expansion=2)
        if arch == "matrix":
            memory = memory.with_weights([rng.standard_normal((d, d))])
        x = rng.standard_normal(d)
        v = rng.standard_normal(d)
        for grad_fn in (grad_l2, grad_dot):
            _, analytic = grad_fn(memory, x, v)
            numeric = numerical_grad(lambda m: grad_fn(m, x, v)[0], memory)
            worst = max(worst, max_relative_error(analytic, numeric))
    return worst


def _deeptransformer_limit_check(ctx: CheckContext) -> float:
    rng = np.random.default_rng(ctx.seed)
    d, n = 2, 16
    stream = random_stream(rng, n, d, ctx.d_v)
    fmap = FeatureMapSpec.exp_truncated(16)
    state = init_rule_state(
        "deeptransformer", init_memory("matrix", lifted_dim(fmap, d), ctx.d_v), fmap
    )
    outputs, _ = run_sequence("deeptransformer", stream, state)
    batch = AttnBatch(
        np.stack([t.q for t in stream]),
        np.stack([t.k for t in stream]),
        np.stack([t.v for t in stream]),
        scale=False,
    )
    return _max_diff(outputs, list(unnormalized_exp_attention(batch)))


CHECKS: Tuple[EquivalenceCheck, ...] = (
    EquivalenceCheck("omega_chunk", 1e-12, ("omega",), _chunk_check("omega"), 1e-10),
    EquivalenceCheck("titans_chunk", 1e-12, ("titans",), _chunk_check("titans"), 1e-10),
    EquivalenceCheck("atlas_chunk", 1e-12, ("atlas",), _chunk_check("atlas"), 1e-10),
    EquivalenceCheck("omega_c1_is_delta", 1e-10, ("omega", "delta"), _reduction_check("omega", "delta")),
    EquivalenceCheck("swla_c1_is_hebbian", 1e-10, ("swla", "hebbian"), _reduction_check("swla", "hebbian")),
    EquivalenceCheck("dla_matrix_is_hebbian", 1e-10, ("dla", "hebbian"), _reduction_check("dla", "hebbian")),
    *(
        EquivalenceCheck(f"closed_form_{rule}", 1e-10, (rule,), _closed_form_check(rule))
        for rule in ("hebbian", "delta", "omega", "dla", "swla", "deeptransformer", "dot")
    ),
    EquivalenceCheck("momentum_expansion", 1e-13, ("titans", "atlas"), _momentum_check),
    EquivalenceCheck("newton_schulz_svd", 1e-5, ("atlas",), _newton_schulz_check),
    EquivalenceCheck("gradients", 1e-5, ("dla", "titans", "atlas"), _gradient_check),
    EquivalenceCheck("deeptransformer_limit", 1e-6, ("deeptransformer",), _deeptransformer_limit_check),
)

CHECK_NAMES: Tuple[str, ...] = tuple(c.name for c in CHECKS)


def select_checks(names: Optional[Sequence[str]] = None, rule: Optional[str] = None) -> List[EquivalenceCheck]:
    """Checks filtered by name, then by rule tag."""
    chosen = [c for c in CHECKS if names is None or c.name in names]
    if rule is not None:
        chosen = [c for c in chosen if rule in c.rules]
    return chosen


@monitor_performance("equivalence.suite", slow_threshold_seconds=60.0)
def run_checks(
    checks: Sequence[EquivalenceCheck], seeds: Sequence[int], ctx: CheckContext
) -> List[Dict[str, object]]:
    """Rows (check, seed, max_abs_diff, tol, pass) in check-major order."""
    rows = []
    for check in checks:
        for seed in seeds:
            diff = check.run(replace(ctx, seed=seed))
            tol = check.tol_for(ctx)
            passed = bool(diff <= tol)
            rows.append(
                {"check": check.name, "seed": seed, "max_abs_diff": diff, "tol": tol, "pass": passed}
            )
            if not passed:
                logger.warning("Equivalence check failed", check=check.name, seed=seed,
                               max_abs_diff=diff, tol=tol)
    return rows
