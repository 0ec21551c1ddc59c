"""Experiment dispatch: resolve a config, run a command, write artifacts.

Exit codes: 0 run completed, 1 configuration or I/O error, 2 an equivalence
check exceeded its tolerance.
"""

import json
import re
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional

import numpy as np
from pydantic import ValidationError

from ..core.config import get_settings
from ..core.errors import ConfigError, MemlabError
from ..core.logging import clear_run_id, get_logger, log_exception, set_run_id
from ..models.pydantic.experiment import FIELD_CHOICES, ExperimentConfig
from ..models.pydantic.records import RunRecord
from ..utils.logging_utils import LogContext, time_operation
from .capacity import REPORT_COLUMNS, CapacityProbe, fit_boundary, sweep_capacity
from .equivalence import CHECK_NAMES, CheckContext, run_checks, select_checks
from .learnability import LearnabilitySetting, OnlineTrainer, difficulty_ordering_holds, run_learnability
from .optimizers import OptimizerConfig
from .recall import RecallConfig, RecallTask, run_recall

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2

LIST_FIELDS = frozenset({"seeds", "m_values", "settings", "n_pairs", "checks"})
_RANGE = re.compile(r"^\s*(-?\d+)\s*\.\.\s*(-?\d+)\s*$")


def coerce_value(text: str) -> Any:
    """Flag text to a value: ``a..b`` is an inclusive int range, commas make lists."""
    match = _RANGE.match(text)
    if match:
        lo, hi = int(match.group(1)), int(match.group(2))
        return list(range(lo, hi + 1))
    if "," in text:
        return [coerce_value(part) for part in text.split(",") if part.strip()]
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _normalise(key: str, value: Any) -> Any:
    if key in LIST_FIELDS:
        if isinstance(value, str):
            value = coerce_value(value)
        if value is not None and not isinstance(value, list):
            value = [value]
    return value


def load_config_file(path: Path) -> Dict[str, Any]:
    """Flat JSON object from ``path``."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def _config_error(exc: ValidationError) -> ConfigError:
    error = exc.errors()[0]
    cause = (error.get("ctx") or {}).get("error")
    field = getattr(cause, "field", None)
    if field is None and error.get("loc"):
        field = str(error["loc"][0])
    if error.get("type") == "extra_forbidden":
        return ConfigError(f"unknown field '{field}'", field=field)
    message = str(cause) if cause is not None else error.get("msg", "invalid value")
    named = error.get("type") == "literal_error" or message.startswith("unknown")
    choices = FIELD_CHOICES.get(field) if named else None
    return ConfigError(f"{field}: {message}" if field else message, field=field, choices=choices)


def parse_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """Merge a JSON config file with flag overrides (flags win) and validate.

    Raises:
        ConfigError: unreadable file, unknown field or name, missing field
    """
    data: Dict[str, Any] = load_config_file(path) if path is not None else {}
    data = {key.replace("-", "_"): value for key, value in data.items()}
    for key, value in (overrides or {}).items():
        key = key.replace("-", "_")
        data[key] = coerce_value(value) if isinstance(value, str) else value
    data = {key: _normalise(key, value) for key, value in data.items()}
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise _config_error(exc) from exc


def _run_capacity(cfg: ExperimentConfig) -> RunRecord:
    record = RunRecord(name="capacity", columns=list(REPORT_COLUMNS))
    boundaries: Dict[str, int] = {}
    for seed in cfg.seeds:
        probe = CapacityProbe(
            d_k=cfg.d_k,
            d_v=cfg.d_v or cfg.d_k,
            m=cfg.m_values[0],
            feature_map=cfg.feature_map_spec(),
            arch=cfg.arch,
            fit=cfg.fit,
            tol_fit=cfg.tol_fit,
            gd_iters=cfg.gd_iters,
            expansion=cfg.expansion,
            unit_keys=cfg.unit_keys,
            seed=seed,
        )
        with LogContext(__name__, command="capacity", seed=seed) as log:
            reports = sweep_capacity(probe, cfg.m_values)
            for report in reports:
                record.add(**report.model_dump())
            boundaries[str(seed)] = fit_boundary(reports)
            log.info("Capacity sweep finished", probes=len(reports), boundary=boundaries[str(seed)])
    record.summary = {
        "boundary": boundaries,
        "min_boundary": min(boundaries.values()),
    }
    return record


def _run_learnability(cfg: ExperimentConfig) -> RunRecord:
    settings = get_settings()
    d = cfg.d or settings.learnability_dim
    trainer = OnlineTrainer(
        optimizer=OptimizerConfig(kind=cfg.optimizer, lr=cfg.lr),
        depth=cfg.depth,
        expansion=cfg.learner_expansion,
    )
    record = RunRecord(name="learnability", columns=["kind", "seed", "step", "loss"])
    finals: Dict[str, List[float]] = {kind: [] for kind in cfg.settings}
    ordered = 0
    for seed in cfg.seeds:
        per_seed: Dict[str, float] = {}
        for kind in cfg.settings:
            setting = LearnabilitySetting(
                kind=kind,
                d=d,
                t=cfg.seq_len,
                rank=(cfg.rank or max(1, d // 8)) if kind == "low_rank" else None,
                swa_window=cfg.swa_window or settings.swa_window,
                seed=seed,
            )
            run = run_learnability(setting, trainer)
            record.rows.extend(run.rows)
            per_seed[kind] = run.summary["final_loss"]
            finals[kind].append(per_seed[kind])
        ordered += difficulty_ordering_holds(per_seed)
    record.summary = {
        "final_loss": {kind: float(np.mean(values)) for kind, values in finals.items()},
        "finals": finals,
        "ordering_fraction": ordered / len(cfg.seeds),
    }
    return record


def _run_recall(cfg: ExperimentConfig) -> RunRecord:
    d = cfg.d or cfg.d_k or 16
    recall_cfg = RecallConfig(
        feature_map=cfg.feature_map_spec(),
        arch=cfg.arch,
        window_size=cfg.window_size,
        ns_k=cfg.ns_k,
        expansion=cfg.expansion,
    )
    gates = cfg.gate_schedule()
    record = RunRecord(
        name="recall", columns=["rule", "seed", "n_pairs", "accuracy", "mean_error"]
    )
    accuracy: Dict[int, List[float]] = {n: [] for n in cfg.n_pairs}
    for seed in cfg.seeds:
        for n in cfg.n_pairs:
            task = RecallTask(
                n_pairs=n,
                d=d,
                distractors=cfg.distractors,
                write_passes=cfg.write_passes,
                seed=seed,
            )
            result = run_recall(task, cfg.rule, gates, recall_cfg)
            record.add(rule=cfg.rule, seed=seed, n_pairs=n, accuracy=result.accuracy,
                       mean_error=result.mean_error)
            accuracy[n].append(result.accuracy)
    means = [float(np.mean(accuracy[n])) for n in sorted(accuracy)]
    record.summary = {
        "rule": cfg.rule,
        "accuracy": {str(n): float(np.mean(accuracy[n])) for n in sorted(accuracy)},
        "monotone": all(a >= b for a, b in zip(means, means[1:])),
    }
    return record


def _run_equivalence(cfg: ExperimentConfig) -> RunRecord:
    checks = select_checks(cfg.checks, cfg.rule)
    if not checks:
        raise ConfigError(
            f"no equivalence check covers rule '{cfg.rule}'", field="checks", choices=CHECK_NAMES
        )
    ctx = CheckContext(
        n_tokens=cfg.n_tokens,
        chunk_size=cfg.chunk_size,
        d_k=cfg.d_k or 6,
        d_v=cfg.d_v or 6,
        window=cfg.window if cfg.window is not None else 3,
        ns_k=cfg.ns_k,
    )
    record = RunRecord(name="equivalence", columns=["check", "seed", "max_abs_diff", "tol", "pass"])
    for row in run_checks(checks, cfg.seeds, ctx):
        record.add(**row)
    failed = sorted({row["check"] for row in record.rows if not row["pass"]})
    record.summary = {
        "checks": [check.name for check in checks],
        "window": ctx.window,
        "max_abs_diff": max(row["max_abs_diff"] for row in record.rows),
        "failed": failed,
        "pass": not failed,
    }
    return record


COMMAND_RUNNERS: Dict[str, Callable[[ExperimentConfig], RunRecord]] = {
    "capacity": _run_capacity,
    "learnability": _run_learnability,
    "recall": _run_recall,
    "equivalence": _run_equivalence,
}


def output_dir(cfg: ExperimentConfig) -> Path:
    return Path(cfg.out) if cfg.out else get_settings().output_path / cfg.command


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run ``cfg.command`` and write ``raw.csv`` and ``summary.json``.

    Returns:
        Process exit code
    """
    run_id = set_run_id()
    try:
        with time_operation(f"experiment.{cfg.command}", __name__, run_id=run_id):
            record = COMMAND_RUNNERS[cfg.command](cfg)
        record.config = cfg.model_dump(mode="json")
        paths = record.write(output_dir(cfg))
    except (MemlabError, ValueError) as exc:
        log_exception(exc, {"command": cfg.command})
        return EXIT_ERROR
    except OSError as exc:
        logger.error("Could not write artifacts", error=str(exc), out=str(output_dir(cfg)))
        return EXIT_ERROR
    finally:
        clear_run_id()

    logger.info("Artifacts written", raw=str(paths["raw"]), summary=str(paths["summary"]))
    if cfg.command == "equivalence" and not record.summary["pass"]:
        logger.error("Equivalence checks failed", failed=record.summary["failed"])
        return EXIT_CHECK_FAILED
    return EXIT_OK
