"""Experiment configuration model.

One flat model covers every command; fields a command does not use keep
their defaults. ``validate_command_fields`` enforces what each command
needs.
"""

from typing import List, Literal, Optional, get_args

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ...core.config import get_settings
from ...experiments.capacity import FitMethod
from ...experiments.equivalence import CHECK_NAMES
from ...experiments.learnability import SETTING_KINDS
from ...experiments.optimizers import OptimizerKind
from ...memory.arch import ARCHS, Arch
from ...memory.feature_maps import FeatureKind, FeatureMapSpec
from ...memory.rules import (
    ConstantGates,
    GateSchedule,
    Gates,
    InverseNormGates,
    RULE_NAMES,
    WINDOWED_RULES,
)

Command = Literal["capacity", "learnability", "recall", "equivalence"]
COMMANDS = get_args(Command)


class FieldRequirementError(ValueError):
    """A field is missing or inconsistent for the chosen command."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(message)


def _default_seeds() -> List[int]:
    return [get_settings().default_seed]


def _default_ns_k() -> int:
    return get_settings().ns_steps


def _default_tol_fit() -> float:
    return get_settings().tol_fit


class ExperimentConfig(BaseModel):
    """Resolved configuration of one run."""

    model_config = ConfigDict(extra="forbid")

    command: Command

    # Memory and rule
    rule: Optional[str] = Field(default=None, description="Memory rule name")
    arch: Arch = Field(default="matrix", description="Memory architecture")
    feature_map: FeatureKind = Field(default="identity", description="Feature map family")
    degree: int = Field(default=1, ge=1, description="Feature map degree")
    expansion: int = Field(default=4, ge=1, description="Hidden width factor of deep memories")

    # Gates
    alpha: float = Field(default=1.0, ge=0.0, le=1.0)
    eta: float = Field(default=1.0, ge=0.0)
    theta: float = Field(default=0.0, ge=0.0, le=1.0)
    gamma: Optional[float] = Field(default=None, ge=0.0, le=1.0, description="Constant window gate")
    normalized_step: bool = Field(default=False, description="Use eta / ||phi(k)||^2 as the step")

    # Dimensions and seeds
    d_k: Optional[int] = Field(default=None, ge=1)
    d_v: Optional[int] = Field(default=None, ge=1)
    d: Optional[int] = Field(default=None, ge=1, description="Token dimension")
    seeds: List[int] = Field(default_factory=_default_seeds, min_length=1)
    out: Optional[str] = Field(default=None, description="Output directory")

    # Chunking
    chunk_size: int = Field(default=1, ge=1)
    window: Optional[int] = Field(
        default=None, ge=1, description="Window length c; 3 for equivalence, 1 otherwise"
    )
    ns_k: int = Field(default_factory=_default_ns_k, ge=1)

    # Capacity
    m_values: Optional[List[int]] = Field(default=None, min_length=1)
    fit: FitMethod = "pseudoinverse"
    tol_fit: float = Field(default_factory=_default_tol_fit, gt=0.0)
    gd_iters: int = Field(default=200_000, ge=1)
    unit_keys: bool = True

    # Learnability
    settings: List[str] = Field(default_factory=lambda: list(SETTING_KINDS), min_length=1)
    seq_len: int = Field(default=1000, ge=1)
    rank: Optional[int] = Field(default=None, ge=1)
    swa_window: Optional[int] = Field(default=None, ge=1)
    optimizer: OptimizerKind = "adam"
    lr: float = Field(default=1e-3, ge=0.0)
    depth: int = Field(default=2, ge=1)
    learner_expansion: int = Field(default=1, ge=1)

    # Recall
    n_pairs: Optional[List[int]] = Field(default=None, min_length=1)
    distractors: int = Field(default=0, ge=0)
    write_passes: int = Field(default=1, ge=1)

    # Equivalence
    checks: Optional[List[str]] = None
    n_tokens: int = Field(default=64, ge=1)

    @field_validator("rule")
    @classmethod
    def validate_rule(cls, v: Optional[str]) -> Optional[str]:
        if v is not None and v not in RULE_NAMES:
            raise ValueError(f"unknown rule '{v}'")
        return v

    @field_validator("settings")
    @classmethod
    def validate_settings(cls, v: List[str]) -> List[str]:
        unknown = [s for s in v if s not in SETTING_KINDS]
        if unknown:
            raise ValueError(f"unknown setting '{unknown[0]}'")
        return v

    @field_validator("checks")
    @classmethod
    def validate_checks(cls, v: Optional[List[str]]) -> Optional[List[str]]:
        unknown = [c for c in v or [] if c not in CHECK_NAMES]
        if unknown:
            raise ValueError(f"unknown check '{unknown[0]}'")
        return v

    @model_validator(mode="after")
    def validate_command_fields(self) -> "ExperimentConfig":
        """Required fields per command."""
        if self.command == "capacity":
            if self.d_k is None:
                raise FieldRequirementError("d_k", "capacity needs d_k")
            if self.m_values is None:
                raise FieldRequirementError("m_values", "capacity needs m_values")
        if self.command == "recall":
            if self.rule is None:
                raise FieldRequirementError("rule", "recall needs a rule")
            if self.n_pairs is None:
                raise FieldRequirementError("n_pairs", "recall needs n_pairs")
        if self.window_size > 1 and self.rule is not None and self.rule not in WINDOWED_RULES:
            raise FieldRequirementError("window", f"rule {self.rule} takes no window (window=1)")
        return self

    @property
    def window_size(self) -> int:
        return self.window if self.window is not None else 1

    def feature_map_spec(self) -> FeatureMapSpec:
        """FeatureMapSpec for ``feature_map`` and ``degree``."""
        if self.feature_map == "identity":
            return FeatureMapSpec.identity()
        if self.feature_map == "polynomial":
            return FeatureMapSpec.polynomial(self.degree)
        if self.feature_map == "exp_truncated":
            return FeatureMapSpec.exp_truncated(self.degree)
        return FeatureMapSpec.block(self.degree)

    def gate_schedule(self) -> GateSchedule:
        """Constant gates, or inverse-norm steps when ``normalized_step`` is set."""
        gammas = (self.gamma,) * self.window_size if self.gamma is not None else None
        if self.normalized_step:
            return InverseNormGates(
                feature_map=self.feature_map_spec(),
                scale=self.eta,
                alpha=self.alpha,
                theta=self.theta,
                gammas=gammas,
            )
        return ConstantGates(Gates(alpha=self.alpha, eta=self.eta, theta=self.theta, gammas=gammas))


# Fields whose values come from a fixed set, for error messages.
FIELD_CHOICES = {
    "command": COMMANDS,
    "rule": RULE_NAMES,
    "arch": ARCHS,
    "feature_map": get_args(FeatureKind),
    "fit": get_args(FitMethod),
    "optimizer": get_args(OptimizerKind),
    "settings": SETTING_KINDS,
    "checks": CHECK_NAMES,
}
