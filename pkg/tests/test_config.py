"""Config validation and key=value file round trips."""

import pytest

from dyndepth.config import (
    DEFAULT_TAU_GRID,
    BaselineConfig,
    ConfigError,
    ModelConfig,
    TrainConfig,
    config_to_text,
    configs_from_text,
    load_config_file,
    save_config_file,
)


def test_defaults_are_desk_scale():
    cfg = ModelConfig()
    assert (cfg.num_blocks, cfg.hidden_dim, cfg.num_heads, cfg.ffn_dim) == (6, 32, 4, 64)
    assert (cfg.max_seq_len, cfg.num_classes) == (32, 2)


def test_tau_grid():
    assert DEFAULT_TAU_GRID == (5e-5, 5e-4, 5e-3, 5e-2, 5e-1)


@pytest.mark.parametrize("overrides", [
    {"num_blocks": 0},
    {"num_classes": 1},
    {"hidden_dim": 30, "num_heads": 4},
    {"ffn_dim": 0},
    {"vocab_size": -1},
])
def test_model_config_rejects_bad_values(overrides):
    with pytest.raises(ConfigError):
        ModelConfig(**overrides)


@pytest.mark.parametrize("overrides", [
    {"tau": -1e-6},
    {"batch_size": 0},
    {"epochs_phase1": -1},
    {"epochs_phase2": -1},
])
def test_train_config_rejects_bad_values(overrides):
    with pytest.raises(ConfigError):
        TrainConfig(**overrides)


def test_train_config_allows_zero_tau_and_zero_epochs():
    cfg = TrainConfig(tau=0.0, epochs_phase1=0, epochs_phase2=0)
    assert cfg.tau == 0.0


def test_baseline_config_validation():
    BaselineConfig(kind="entropy", entropy_threshold=0.1).validate(6)
    BaselineConfig(kind="patience", patience=6).validate(6)
    with pytest.raises(ConfigError):
        BaselineConfig(kind="static").validate(6)
    with pytest.raises(ConfigError):
        BaselineConfig(kind="entropy", entropy_threshold=-0.1).validate(6)
    with pytest.raises(ConfigError):
        BaselineConfig(kind="patience", patience=7).validate(6)
    with pytest.raises(ConfigError):
        BaselineConfig(kind="patience", patience=0).validate(6)


def test_config_file_round_trip(tmp_path):
    model_cfg = ModelConfig(num_blocks=3, hidden_dim=16, num_heads=2, ffn_dim=24,
                            vocab_size=40, max_seq_len=20, num_classes=3)
    train_cfg = TrainConfig(tau=0.05, epochs_phase1=2, seed=7)
    path = tmp_path / "run.cfg"
    save_config_file(path, model_cfg, train_cfg)
    loaded_model, loaded_train = load_config_file(path)
    assert loaded_model == model_cfg
    assert loaded_train == train_cfg


def test_text_parsing_ignores_comments_and_blanks():
    text = "# a comment\n\nnum_blocks=2\n  num_heads = 1 \nhidden_dim=8\n"
    model_cfg, train_cfg = configs_from_text(text)
    assert model_cfg.num_blocks == 2
    assert model_cfg.num_heads == 1
    assert train_cfg == TrainConfig()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        configs_from_text("depth=3\n")


def test_malformed_line_reports_number():
    with pytest.raises(ConfigError, match="line 2"):
        configs_from_text("num_blocks=2\nwhat is this\n")


def test_bad_value_named():
    with pytest.raises(ConfigError, match="num_blocks"):
        configs_from_text("num_blocks=two\n")


def test_config_to_text_is_sorted_and_tagged_by_key():
    text = config_to_text(ModelConfig())
    keys = [line.split("=")[0] for line in text.strip().splitlines()]
    assert keys == sorted(keys)
