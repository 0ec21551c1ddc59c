"""Tests for configuration parsing and experiment dispatch."""

import json
from unittest.mock import patch

import pytest

from src.core.errors import ConfigError
from src.experiments.runner import (
    EXIT_CHECK_FAILED,
    EXIT_ERROR,
    EXIT_OK,
    coerce_value,
    parse_config,
    run_experiment,
)
from src.memory.rules import ConstantGates, InverseNormGates


class TestCoerceValue:
    """Test flag text conversion."""

    def test_range(self):
        """a..b is an inclusive integer range."""
        assert coerce_value("4..12") == list(range(4, 13))

    def test_list(self):
        """Commas make lists of converted items."""
        assert coerce_value("1,2,3") == [1, 2, 3]
        assert coerce_value("low_rank,mlp_map") == ["low_rank", "mlp_map"]

    def test_scalars(self):
        """JSON scalars convert; bare words stay strings."""
        assert coerce_value("0.5") == 0.5
        assert coerce_value("true") is True
        assert coerce_value("omega") == "omega"


class TestParseConfig:
    """Test merging and validation."""

    def test_defaults(self):
        """Settings supply seeds and numerics defaults."""
        cfg = parse_config(overrides={"command": "equivalence"})
        assert cfg.seeds == [0]
        assert cfg.ns_k == 5
        assert cfg.tol_fit == 1e-6
        assert cfg.window is None
        assert cfg.window_size == 1

    def test_flags_win(self, tmp_path):
        """Flag overrides replace config file values."""
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"command": "capacity", "d_k": 4, "m_values": [1, 2]}))
        cfg = parse_config(path, {"d-k": "8"})
        assert cfg.d_k == 8
        assert cfg.m_values == [1, 2]

    def test_scalar_list_field(self):
        """A single value for a list field becomes a one-item list."""
        cfg = parse_config(overrides={"command": "recall", "rule": "delta", "n_pairs": "4"})
        assert cfg.n_pairs == [4]

    def test_unknown_rule_lists_choices(self):
        """A misspelt rule names the field and the valid rules."""
        with pytest.raises(ConfigError) as exc_info:
            parse_config(overrides={"command": "recall", "rule": "detla", "n_pairs": "4"})
        assert exc_info.value.field == "rule"
        assert "delta" in exc_info.value.choices
        assert "detla" in str(exc_info.value)

    def test_unknown_command(self):
        """Commands are a closed set."""
        with pytest.raises(ConfigError) as exc_info:
            parse_config(overrides={"command": "train"})
        assert exc_info.value.field == "command"
        assert "capacity" in exc_info.value.choices

    def test_empty_seeds(self):
        """An empty seed list names the seeds field."""
        with pytest.raises(ConfigError) as exc_info:
            parse_config(overrides={"command": "equivalence", "seeds": "[]"})
        assert exc_info.value.field == "seeds"

    def test_missing_required_field(self):
        """capacity needs m_values."""
        with pytest.raises(ConfigError) as exc_info:
            parse_config(overrides={"command": "capacity", "d_k": "4"})
        assert exc_info.value.field == "m_values"

    def test_window_on_online_rule(self):
        """Online rules refuse a window."""
        with pytest.raises(ConfigError) as exc_info:
            parse_config(overrides={"command": "equivalence", "rule": "delta", "window": "3"})
        assert exc_info.value.field == "window"

    def test_unknown_field(self):
        """Unrecognised keys are refused."""
        with pytest.raises(ConfigError, match="unknown field 'colour'"):
            parse_config(overrides={"command": "equivalence", "colour": "red"})

    def test_unreadable_file(self, tmp_path):
        """Missing and malformed files are configuration errors."""
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError):
            parse_config(bad)

    def test_gate_schedule(self):
        """normalized_step picks inverse-norm gates."""
        cfg = parse_config(overrides={"command": "recall", "rule": "delta", "n_pairs": "2"})
        assert isinstance(cfg.gate_schedule(), ConstantGates)
        cfg = parse_config(overrides={
            "command": "recall", "rule": "delta", "n_pairs": "2", "normalized_step": "true",
        })
        assert isinstance(cfg.gate_schedule(), InverseNormGates)

    def test_gamma_at_unit_window(self):
        """A constant gamma reaches the gates when the window is one pair."""
        cfg = parse_config(overrides={
            "command": "recall", "rule": "omega", "n_pairs": "2", "gamma": "0.5", "window": "1",
        })
        assert cfg.gate_schedule().gates.gammas == (0.5,)


class TestRunExperiment:
    """Test dispatch and exit codes."""

    def test_capacity_artifacts(self, tmp_path):
        """A capacity run writes rows and a boundary summary."""
        cfg = parse_config(overrides={
            "command": "capacity", "d_k": "4", "m_values": "2..6", "out": str(tmp_path),
        })
        assert run_experiment(cfg) == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["rows"] == 5
        assert summary["summary"]["boundary"] == {"0": 4}

    def test_recall_summary(self, tmp_path):
        """Recall summaries report accuracy per pair count."""
        cfg = parse_config(overrides={
            "command": "recall", "rule": "hebbian", "n_pairs": "2,4", "d": "8", "out": str(tmp_path),
        })
        assert run_experiment(cfg) == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())["summary"]
        assert summary["accuracy"] == {"2": 1.0, "4": 1.0}
        assert summary["monotone"] is True

    def test_learnability_summary(self, tmp_path):
        """Learnability summaries carry final losses per setting."""
        cfg = parse_config(overrides={
            "command": "learnability", "settings": "low_rank,mlp_map", "d": "4",
            "seq_len": "12", "out": str(tmp_path),
        })
        assert run_experiment(cfg) == EXIT_OK
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary["summary"]["final_loss"]) == {"low_rank", "mlp_map"}
        assert summary["rows"] == 24

    def test_failed_check_exit_code(self, tmp_path):
        """A check over tolerance exits with 2."""
        failing = [{"check": "omega_chunk", "seed": 0, "max_abs_diff": 1.0, "tol": 1e-12, "pass": False}]
        cfg = parse_config(overrides={"command": "equivalence", "rule": "omega", "out": str(tmp_path)})
        with patch("src.experiments.runner.run_checks", return_value=failing):
            assert run_experiment(cfg) == EXIT_CHECK_FAILED
        assert json.loads((tmp_path / "summary.json").read_text())["summary"]["failed"] == ["omega_chunk"]

    def test_no_matching_checks(self, tmp_path):
        """A rule with no selected check is a configuration error."""
        cfg = parse_config(overrides={
            "command": "equivalence", "rule": "hebbian", "checks": "atlas_chunk", "out": str(tmp_path),
        })
        assert run_experiment(cfg) == EXIT_ERROR

    def test_unwritable_output(self, tmp_path):
        """An output path that is a file is an I/O error."""
        blocker = tmp_path / "file"
        blocker.write_text("")
        cfg = parse_config(overrides={
            "command": "equivalence", "checks": "momentum_expansion", "out": str(blocker / "sub"),
        })
        assert run_experiment(cfg) == EXIT_ERROR

    @pytest.mark.parametrize("window,expected", [("1", 1), ("4", 4), (None, 3)])
    def test_equivalence_window_passed_through(self, tmp_path, window, expected):
        """The configured window reaches the checks unchanged; unset means 3."""
        overrides = {"command": "equivalence", "checks": "omega_chunk", "out": str(tmp_path)}
        if window is not None:
            overrides["window"] = window
        cfg = parse_config(overrides=overrides)
        passing = [{"check": "omega_chunk", "seed": 0, "max_abs_diff": 0.0, "tol": 1e-12, "pass": True}]
        with patch("src.experiments.runner.run_checks", return_value=passing) as mock_run:
            assert run_experiment(cfg) == EXIT_OK
        ctx = mock_run.call_args[0][2]
        assert ctx.window == expected
        recorded = json.loads((tmp_path / "summary.json").read_text())["config"]["window"]
        assert recorded == (None if window is None else expected)
        assert json.loads((tmp_path / "summary.json").read_text())["summary"]["window"] == expected
