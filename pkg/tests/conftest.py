import dataclasses

import pytest

from config import DataConfig, ExperimentConfig, LoggingConfig, ModelConfig, TrainConfig
from data import synthetic_images


def _tiny_config(**overrides) -> ExperimentConfig:
    # 16 complex symbols at ratio 0.25 -> L_p = 24, L_c = 8
    model = ModelConfig(base_width=8, encoder_blocks=(1, 1), common_blocks=1, decoder_blocks=(1, 1, 1),
                        private_dim=24, common_dim=8, transformer_layers=1, transformer_heads=2, num_users=4)
    train = TrainConfig(epochs=2, batch_size=4, groups=2, learning_rate=1e-3, checkpoint_interval=1,
                        deterministic=True)
    config = ExperimentConfig(seed=0, symbols_per_image=16, common_ratio=0.25, model=model, train=train,
                              data=DataConfig(source='synthetic', limit=8),
                              logging=LoggingConfig(progress=False))
    sections = {name: overrides.pop(name) for name in ('model', 'channel', 'loss', 'train', 'data')
                if name in overrides}
    for name, values in sections.items():
        config = dataclasses.replace(config, **{name: dataclasses.replace(getattr(config, name), **values)})
    return dataclasses.replace(config, **overrides).validate()


@pytest.fixture
def make_config():
    '''factory for a toy-width experiment: make_config(train={'epochs': 1}, seed=3)'''
    return _tiny_config


@pytest.fixture
def images():
    return synthetic_images(8, seed=0)
