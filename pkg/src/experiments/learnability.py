"""Online learnability of synthetic input-output maps.

A residual MLP learner sees one (i_j, o_j) pair per step, records the
normalised loss ||M(i_j) - o_j||^2 / ||o_j||^2 before updating, and takes one
outer-optimizer step on it. Five settings of increasing difficulty generate
the pairs.
"""

from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..core.logging import get_logger
from ..memory.arch import Activation, forward, gelu, init_memory, param_grad
from ..memory.attention import AttnBatch, sliding_window_attention, softmax_attention
from ..memory.linalg import Mat
from ..models.pydantic.records import RunRecord
from ..utils.performance_decorators import monitor_performance
from .optimizers import OptimizerConfig, OptimizerState, outer_optimizer_step

logger = get_logger(__name__)

SettingKind = Literal["low_rank", "mlp_map", "attn_mlp", "attn_outputs_as_inputs", "swa_mlp"]
SETTING_KINDS: Tuple[str, ...] = (
    "low_rank",
    "mlp_map",
    "attn_mlp",
    "attn_outputs_as_inputs",
    "swa_mlp",
)
ATTENTION_KINDS = frozenset({"attn_mlp", "attn_outputs_as_inputs", "swa_mlp"})


class LearnabilitySetting(BaseModel):
    """Synthetic stream description."""

    kind: SettingKind
    d: int = Field(default=256, ge=1, description="Token dimension")
    t: int = Field(default=1000, ge=1, description="Stream length")
    rank: Optional[int] = Field(default=None, ge=1, description="Rank for low_rank")
    swa_window: int = Field(default=512, ge=1, description="Window for swa_mlp")
    seed: int = 0

    @model_validator(mode="after")
    def validate_kind_params(self) -> "LearnabilitySetting":
        if self.kind == "low_rank":
            if self.rank is None:
                raise ValueError("low_rank setting needs a rank")
            if self.rank > self.d:
                raise ValueError(f"rank {self.rank} exceeds d={self.d}")
        return self


class OnlineTrainer(BaseModel):
    """Learner shape and outer optimizer."""

    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    depth: int = Field(default=2, ge=1, description="Residual blocks in the learner")
    expansion: int = Field(default=1, ge=1, description="Hidden width factor")
    activation: Activation = "gelu"
    tail: Optional[int] = Field(default=None, ge=1, description="Window for the final mean loss")


def attention_features(
    inputs: Mat, wq: Mat, wk: Mat, wv: Mat, window: Optional[int] = None
) -> Mat:
    """Causal (or sliding-window) softmax attention over projected inputs (rows)."""
    batch = AttnBatch(inputs @ wq, inputs @ wk, inputs @ wv)
    if window is None:
        return softmax_attention(batch)
    return sliding_window_attention(batch, window)


def _target_mlp(rng: np.random.Generator, d: int):
    w_in = rng.standard_normal((d, d)) / np.sqrt(d)
    w_out = rng.standard_normal((d, d)) / np.sqrt(d)
    return lambda x: gelu(x @ w_in) @ w_out


def gen_setting(setting: LearnabilitySetting) -> Tuple[Mat, Mat]:
    """Inputs and targets, one row per step."""
    rng = np.random.default_rng(setting.seed)
    d, t = setting.d, setting.t
    if setting.kind == "low_rank":
        left = rng.standard_normal((d, setting.rank)) / np.sqrt(d)
        right = rng.standard_normal((setting.rank, d)) / np.sqrt(setting.rank)
        inputs = rng.standard_normal((t, d))
        # o_j = W^T i_j with W = left @ right
        return inputs, inputs @ (left @ right)

    target = _target_mlp(rng, d)
    inputs = rng.standard_normal((t, d))
    if setting.kind == "mlp_map":
        return inputs, target(inputs)

    wq, wk, wv = (rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(3))
    window = setting.swa_window if setting.kind == "swa_mlp" else None
    attended = attention_features(inputs, wq, wk, wv, window)
    if setting.kind == "attn_outputs_as_inputs":
        return attended, target(attended)
    return inputs, target(attended)


def windowed_mean(losses: Sequence[float], window: Optional[int] = None) -> float:
    """Mean of the last ``window`` losses (default: last tenth, at least one)."""
    if not losses:
        return float("nan")
    n = window or max(1, len(losses) // 10)
    return float(np.mean(losses[-n:]))


@monitor_performance("learnability.run", slow_threshold_seconds=30.0)
def run_learnability(setting: LearnabilitySetting, trainer: OnlineTrainer) -> RunRecord:
    """Train online over the setting's stream and record the loss curve."""
    inputs, targets = gen_setting(setting)
    model = init_memory(
        "stackL",
        setting.d,
        setting.d,
        seed=setting.seed + 1,
        expansion=trainer.expansion,
        depth=trainer.depth,
        activation=trainer.activation,
    )
    opt = OptimizerState.create(trainer.optimizer, model.weights)
    record = RunRecord(name=f"learnability-{setting.kind}", columns=["kind", "seed", "step", "loss"])

    zero_norm_steps = 0
    losses: List[float] = []
    for j in range(setting.t):
        x, o = inputs[j], targets[j]
        resid = forward(model, x) - o
        denom = float(o @ o)
        if denom == 0.0:
            zero_norm_steps += 1
            denom = 1.0
        loss = float(resid @ resid) / denom
        grads = param_grad(model, x, 2.0 * resid / denom)
        params, opt = outer_optimizer_step(opt, model.weights, grads.grads)
        model = model.with_weights(params)
        losses.append(loss)
        record.add(kind=setting.kind, seed=setting.seed, step=j, loss=loss)

    record.summary = {
        "kind": setting.kind,
        "seed": setting.seed,
        "final_loss": windowed_mean(losses, trainer.tail),
        "zero_norm_steps": zero_norm_steps,
    }
    if zero_norm_steps:
        logger.warning("Zero-norm targets trained unnormalised", kind=setting.kind,
                       steps=zero_norm_steps)
    logger.info("Learnability run finished", kind=setting.kind, seed=setting.seed,
                final_loss=record.summary["final_loss"])
    return record


def difficulty_ordering_holds(finals: Dict[str, float]) -> bool:
    """low_rank <= mlp_map <= every attention-derived setting present."""
    if "low_rank" in finals and "mlp_map" in finals and finals["low_rank"] > finals["mlp_map"]:
        return False
    easy = finals.get("mlp_map", finals.get("low_rank"))
    if easy is None:
        return True
    return all(finals[k] >= easy for k in finals if k in ATTENTION_KINDS)


def compare_settings(
    kinds: Sequence[str],
    seeds: Sequence[int],
    trainer: OnlineTrainer,
    **setting_params,
) -> Dict[str, object]:
    """Final losses per kind and seed plus the fraction of seeds ordered as expected."""
    finals: Dict[str, List[float]] = {k: [] for k in kinds}
    ordered = 0
    for seed in seeds:
        per_seed = {}
        for kind in kinds:
            setting = LearnabilitySetting(kind=kind, seed=seed, **setting_params)
            per_seed[kind] = run_learnability(setting, trainer).summary["final_loss"]
            finals[kind].append(per_seed[kind])
        ordered += difficulty_ordering_holds(per_seed)
    return {"finals": finals, "ordering_fraction": ordered / len(seeds) if seeds else 0.0}
