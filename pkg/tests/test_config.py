import dataclasses
from pathlib import Path

import pytest

from config import (ExperimentConfig, ModelConfig, TrainConfig, feature_split, load_config, save_config)
from errors import ConfigurationError

CONFIGS = Path(__file__).resolve().parent.parent / 'configs'


def test_default_split_of_the_symbol_budget():
    assert feature_split(1024, 0.2) == (1638, 410)
    config = ExperimentConfig().validate()
    assert (config.model.private_dim, config.model.common_dim) == (1638, 410)


def test_zero_ratio_gives_private_only():
    assert feature_split(1024, 0.0) == (2048, 0)
    config = ExperimentConfig().with_common_ratio(0.0)
    assert config.model.private_only
    assert config.model.private_dim == 2048


@pytest.mark.parametrize('ratio', [-0.1, 1.0, 1.5])
def test_ratio_out_of_range(ratio):
    with pytest.raises(ConfigurationError):
        feature_split(1024, ratio)


def test_batch_must_split_into_groups():
    with pytest.raises(ConfigurationError, match='divisible'):
        TrainConfig(batch_size=50, groups=7).validate()


def test_heads_must_divide_transformer_width():
    with pytest.raises(ConfigurationError, match='transformer_heads'):
        ModelConfig(base_width=8, transformer_heads=3).validate()


def test_odd_feature_length_rejected():
    config = ExperimentConfig()
    odd = dataclasses.replace(config, model=dataclasses.replace(config.model, private_dim=1637))
    with pytest.raises(ConfigurationError, match='even'):
        odd.validate()


def test_per_user_decoders_need_one_decoder_per_user():
    config = ExperimentConfig()
    per_user = dataclasses.replace(config, model=dataclasses.replace(config.model, shared_decoder=False,
                                                                     num_users=10))
    with pytest.raises(ConfigurationError):
        per_user.validate()


def test_from_dict_fills_feature_lengths():
    config = ExperimentConfig.from_dict({'symbols_per_image': 16, 'common_ratio': 0.25,
                                         'model': {'base_width': 8, 'transformer_heads': 2}})
    assert (config.model.private_dim, config.model.common_dim) == (24, 8)
    assert config.model.encoder_blocks == (2, 3)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError, match='unknown'):
        ExperimentConfig.from_dict({'learning_rate': 0.1})
    with pytest.raises(ConfigurationError, match='unknown keys'):
        ExperimentConfig.from_dict({'train': {'lr': 0.1}})


def test_save_and_load(tmp_path, make_config):
    config = make_config(train={'grad_clip': 1.0})
    path = tmp_path / 'config.json'
    save_config(config, path)
    assert load_config(path) == config


def test_invalid_json(tmp_path):
    path = tmp_path / 'broken.json'
    path.write_text('{"seed": ')
    with pytest.raises(ConfigurationError, match='JSON'):
        load_config(path)


def test_shipped_configs_load():
    default = load_config(CONFIGS / 'default.json')
    assert default == ExperimentConfig().validate()
    smoke = load_config(CONFIGS / 'smoke.json')
    assert smoke.model.base_width == 32
    assert smoke.train.epochs == 20
    assert smoke.data.limit == 2000
