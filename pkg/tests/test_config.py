"""Run-config round trips and cross-field validation at load time."""

from __future__ import annotations

import json
import math

import pytest

from skillgraph.config import (
    ConfigError,
    RunConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)


def test_default_config_round_trips(tmp_path):
    cfg = RunConfig()
    path = save_config(cfg, tmp_path / "config.json")
    assert load_config(path) == cfg


def test_trigger_threshold_null_means_always_trigger(tmp_path):
    cfg = RunConfig()
    assert math.isinf(cfg.adaptation.trigger_threshold)
    raw = config_to_dict(cfg)
    assert raw["adaptation"]["trigger_threshold"] is None
    assert math.isinf(config_from_dict(raw).adaptation.trigger_threshold)
    raw["adaptation"]["trigger_threshold"] = 0.75
    assert config_from_dict(raw).adaptation.trigger_threshold == 0.75


def test_tier_threshold_ordering_rejected_at_load():
    raw = config_to_dict(RunConfig())
    raw["adaptation"]["theta_full"] = 0.1
    raw["adaptation"]["theta_part"] = 0.5
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_supercritical_sim_branching_rejected_at_load():
    raw = config_to_dict(RunConfig())
    raw["sim"]["decompose_prob"] = 0.6
    raw["sim"]["branching"] = 2
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_unknown_provider_role_or_kind_rejected():
    raw = config_to_dict(RunConfig())
    raw["providers"] = {"oracle": "mock"}
    with pytest.raises(ConfigError):
        config_from_dict(raw)
    raw["providers"] = {"verifier": "llm"}
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_malformed_config_file_is_a_config_error(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{oops")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text(json.dumps([1, 2, 3]))
    with pytest.raises(ConfigError):
        load_config(path)


def test_api_key_is_env_named_never_stored():
    raw = config_to_dict(RunConfig())
    assert raw["http"]["api_key_env"] == "SKILLGRAPH_API_KEY"
    assert "api_key" not in raw["http"]
