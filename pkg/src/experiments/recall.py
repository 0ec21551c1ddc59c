"""Training-free multi-query associative recall.

The write phase streams every (key, value) pair through a memory rule; the
read phase queries each key and counts a hit when the nearest candidate
value (written values plus distractors) is the stored one.

Keys are orthonormal up to n_pairs = d and random unit vectors beyond, so
recall degrades only once the rule runs out of room. Keys, values and
distractors come from separate seeded streams, so tasks with more pairs
extend tasks with fewer.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

from ..core.logging import get_logger
from ..memory.arch import Arch, init_memory
from ..memory.feature_maps import FeatureMapSpec, lifted_dim
from ..memory.linalg import Mat, Vec
from ..memory.rules import GateSchedule, Token, init_rule_state, read_out, run_sequence
from ..utils.performance_decorators import monitor_performance

logger = get_logger(__name__)


class RecallTask(BaseModel):
    """Pairs to store and how to store them."""

    n_pairs: int = Field(..., ge=1)
    d: int = Field(..., ge=1, description="Key and value dimension")
    distractors: int = Field(default=0, ge=0, description="Extra candidates per query")
    write_passes: int = Field(default=1, ge=1, description="Repetitions of the write phase")
    seed: int = 0


class RecallConfig(BaseModel):
    """Memory used for recall."""

    feature_map: FeatureMapSpec = Field(default_factory=FeatureMapSpec.identity)
    arch: Arch = "matrix"
    window_size: int = Field(default=1, ge=1)
    ns_k: int = Field(default=5, ge=1)
    expansion: int = Field(default=1, ge=1)


@dataclass
class RecallResult:
    """Outcome of one recall task."""

    accuracy: float
    errors: List[float]
    hits: List[bool]

    @property
    def mean_error(self) -> float:
        return float(np.mean(self.errors)) if self.errors else 0.0


def _unit_rows(x: Mat) -> Mat:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return x / norms


def gen_recall_pairs(task: RecallTask) -> Tuple[Mat, Mat, Mat]:
    """Keys (n x d), values (n x d) and distractor values."""
    key_rng = np.random.default_rng([task.seed, 0])
    value_rng = np.random.default_rng([task.seed, 1])
    distractor_rng = np.random.default_rng([task.seed, 2])

    basis, _ = np.linalg.qr(key_rng.standard_normal((task.d, task.d)))
    n_basis = min(task.n_pairs, task.d)
    extra = _unit_rows(key_rng.standard_normal((task.n_pairs - n_basis, task.d)))
    keys = np.vstack([basis.T[:n_basis], extra])

    values = _unit_rows(value_rng.standard_normal((task.n_pairs, task.d)))
    distractors = _unit_rows(
        distractor_rng.standard_normal((task.n_pairs * task.distractors, task.d))
    )
    return keys, values, distractors


@monitor_performance("recall.run", slow_threshold_seconds=30.0)
def run_recall(
    task: RecallTask,
    rule: str,
    gates: Optional[GateSchedule] = None,
    cfg: Optional[RecallConfig] = None,
) -> RecallResult:
    """Write all pairs, then read every key back."""
    cfg = cfg or RecallConfig()
    keys, values, distractors = gen_recall_pairs(task)
    memory = init_memory(
        cfg.arch,
        lifted_dim(cfg.feature_map, task.d),
        task.d,
        seed=task.seed,
        expansion=cfg.expansion,
    )
    state = init_rule_state(rule, memory, cfg.feature_map, cfg.window_size)
    stream = [Token(k=keys[i], v=values[i]) for i in range(task.n_pairs)] * task.write_passes
    _, state = run_sequence(rule, stream, state, schedule=gates, ns_k=cfg.ns_k)

    candidates = np.vstack([values, distractors])
    hits: List[bool] = []
    errors: List[float] = []
    for i in range(task.n_pairs):
        y: Vec = read_out(state, keys[i])
        distances = np.linalg.norm(candidates - y, axis=1)
        hits.append(int(np.argmin(distances)) == i)
        errors.append(float(np.linalg.norm(y - values[i])))

    result = RecallResult(accuracy=float(np.mean(hits)), errors=errors, hits=hits)
    logger.debug("Recall finished", rule=rule, n_pairs=task.n_pairs, accuracy=result.accuracy)
    return result
