"""
Tests for pipeline configuration loading and validation.
"""

import json

import pytest

from fincards_backend.config.config import (
    CardMask,
    JudgeBackend,
    JudgeConfig,
    PipelineConfig,
    Stage2Config,
    Stage3Config,
    Variant,
    load_pipeline_config,
)
from fincards_backend.exceptions import ConfigError


def test_defaults():
    config = PipelineConfig()
    assert config.variant == Variant.FULL
    assert config.lexical.k1 == 1.2
    assert config.lexical.cutoff.n_max == 150
    assert config.stage2.group_size == 25
    assert (config.stage2.k_min, config.stage2.k_max) == (3, 8)
    assert config.stage3.max_rounds == 5
    assert config.stage3.jaccard_threshold == 0.9
    assert config.judge.backend == JudgeBackend.ORACLE
    assert not config.card_mask.active


def test_variant_stage_flags():
    assert Variant.FULL.runs_stage2 and Variant.FULL.runs_stage3
    assert Variant.S1_S2.runs_stage2 and not Variant.S1_S2.runs_stage3
    assert not Variant.S1_S3.runs_stage2 and Variant.S1_S3.runs_stage3
    assert not Variant.STAGE1.runs_stage2 and not Variant.ZEROSHOT_RERANK.runs_stage3


def test_judge_temperature_is_fixed():
    with pytest.raises(ValueError):
        JudgeConfig(temperature=0.3)


def test_remote_judge_needs_endpoint_and_model():
    with pytest.raises(ValueError):
        JudgeConfig(backend=JudgeBackend.REMOTE, model="m")
    config = JudgeConfig(backend=JudgeBackend.REMOTE, endpoint="http://judge.local/v1/chat/completions", model="m")
    assert config.max_retries == 2


@pytest.mark.parametrize(
    "kwargs",
    [
        {"k_min": 5, "k_max": 3},
        {"group_size": 4},
        {"retention_threshold": 0},
    ],
)
def test_stage2_bounds(kwargs):
    with pytest.raises(ValueError):
        Stage2Config(**kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"min_group_size": 10},
        {"max_group_size": 30},
        {"min_rounds": 1},
        {"jaccard_threshold": 1.5},
    ],
)
def test_stage3_bounds(kwargs):
    with pytest.raises(ValueError):
        Stage3Config(**kwargs)


def test_single_round_allowed_without_early_stop():
    config = Stage3Config(min_rounds=1, early_stop=False, max_rounds=1)
    assert config.max_rounds == 1


def test_masks_require_stage2_variant():
    with pytest.raises(ValueError):
        PipelineConfig(variant=Variant.STAGE1, card_mask=CardMask(drop_temporal=True))
    config = PipelineConfig(variant=Variant.S1_S2, card_mask=CardMask(drop_temporal=True, drop_scope=True))
    assert config.card_mask.label == "drop_temporal+drop_scope"


def test_unknown_keys_rejected():
    with pytest.raises(ValueError):
        PipelineConfig(stage2={"group_sise": 10})


def test_load_config_file_and_overrides(tmp_path):
    """Test that overrides merge into the file's nested sections key by key."""
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"variant": "s1_s3", "stage3": {"k": 5, "max_rounds": 3}}))
    config = load_pipeline_config(path, {"stage3": {"base_seed": 7}})
    assert config.variant == Variant.S1_S3
    assert config.stage3.k == 5
    assert config.stage3.max_rounds == 3
    assert config.stage3.base_seed == 7


def test_load_config_without_file():
    config = load_pipeline_config(None, {"judge": {"backend": "noisy_oracle", "noise_scale": 1.5}})
    assert config.judge.backend == JudgeBackend.NOISY_ORACLE
    assert config.judge.noise_scale == 1.5


def test_load_config_errors(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_pipeline_config(path)
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_pipeline_config(path)
    path.write_text(json.dumps({"stage2": {"k_min": 0}}))
    with pytest.raises(ConfigError):
        load_pipeline_config(path)


def test_environment_fills_missing_keys(monkeypatch):
    monkeypatch.setenv("FINCARDS_STAGE3__BASE_SEED", "11")
    monkeypatch.setenv("FINCARDS_VARIANT", "s1_s2")
    config = PipelineConfig()
    assert config.stage3.base_seed == 11
    assert config.variant == Variant.S1_S2


def test_snapshot_is_json_ready_without_paths():
    snapshot = PipelineConfig(paths={"chunks": "data/chunks.jsonl"}).snapshot()
    assert "paths" not in snapshot
    assert snapshot["stage3"]["aggregation"] == "borda"
    assert json.loads(json.dumps(snapshot)) == snapshot
