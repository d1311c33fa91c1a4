import json

import pytest

from mcgan.config import (ConfigError, DataConfig, Hyperparams, RunConfig,
                          TrainConfig, toy_hyperparams)


def test_default_channel_plan_halves_from_seed():
    hp = Hyperparams()
    assert hp.channel_plan == [1024, 512, 256, 128, 64]
    assert hp.final_channels == 64
    assert hp.seed_size == 8


def test_default_sizes_per_block():
    hp = Hyperparams()
    assert [hp.fg_size(b) for b in range(hp.num_blocks)] == [8, 16, 32, 64]
    assert hp.disc_terminal_channels == 512


def test_bg_level_channels_match_block_consumption():
    hp = Hyperparams()
    # block j consumes level N-1-j, whose channels equal the block's FG depth
    for j in range(hp.num_blocks):
        level = hp.num_blocks - 1 - j
        assert hp.bg_level_channels(level) == hp.channel_plan[j]


def test_rejects_non_square():
    with pytest.raises(ConfigError):
        Hyperparams(width=128, height=64)


def test_rejects_indivisible_width():
    with pytest.raises(ConfigError):
        Hyperparams(width=100, height=100, num_blocks=4)


def test_rejects_negative_weights():
    with pytest.raises(ConfigError):
        Hyperparams(kl_weight=-1.0)


def test_round_trip_dict():
    hp = toy_hyperparams()
    assert Hyperparams.from_dict(hp.to_dict()) == hp


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        Hyperparams.from_dict({"widht": 64})


def test_train_config_defaults():
    cfg = TrainConfig()
    assert cfg.lr == 2e-4
    assert cfg.adam_beta1 == 0.5
    assert cfg.batch_size == 32
    assert cfg.lr_decay_every == 200
    assert cfg.lr_decay_factor == 0.5


def test_train_config_rejects_batch_of_one():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)


def test_data_config_requires_manifest_path():
    with pytest.raises(ConfigError):
        DataConfig(kind="manifest")


def test_run_config_json_round_trip(tmp_path):
    rc = RunConfig(model=toy_hyperparams(), train=TrainConfig(epochs=5),
                   data=DataConfig(train_count=10))
    path = tmp_path / "run.json"
    rc.save(path)
    loaded = RunConfig.load(path)
    assert loaded.to_dict() == rc.to_dict()
    # the file itself is plain JSON
    json.loads(path.read_text())
