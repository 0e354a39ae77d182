'''
Experiment configuration: nested dataclasses loaded from / dumped to JSON.

The defaults reproduce the full training setup (ConvNeXt widths 128/256/512, CIFAR10, Adam 1e-4, 1000 epochs,
50 images per batch split into 10 groups of 5, SNR drawn uniformly in [12, 18] dB, 1024 complex
symbols per image, common feature ratio 0.2). The loss weights are our own choice.
'''
import dataclasses
import json
from dataclasses import dataclass, field
from typing import Optional, Tuple

from errors import ConfigurationError

CHANNEL_MODELS = ('awgn', 'rician', 'rayleigh')
OPTIMIZERS = ('adam', 'sgd')
GROUPINGS = ('balanced', 'sequential')
RECONSTRUCTION_LOSSES = ('charbonnier',)
DATA_SOURCES = ('cifar10', 'synthetic')
WANDB_MODES = ('disabled', 'offline', 'online')


def feature_split(symbols_per_image: int, common_ratio: float) -> Tuple[int, int]:
    '''
    splits the per-user budget of complex symbols into (L_p, L_c) real feature lengths.
    both lengths are even so that each maps onto whole complex symbols.
    '''
    if symbols_per_image < 1:
        raise ConfigurationError(f"symbols_per_image must be >= 1, got {symbols_per_image}")
    if not 0.0 <= common_ratio < 1.0:
        raise ConfigurationError(f"common_ratio must be in [0, 1), got {common_ratio}")
    n_feat = 2 * symbols_per_image
    common_dim = 2 * int(round(common_ratio * symbols_per_image))
    return n_feat - common_dim, common_dim


@dataclass(frozen=True)
class ModelConfig:
    base_width: int = 128
    encoder_blocks: Tuple[int, int] = (2, 3)
    common_blocks: int = 3
    decoder_blocks: Tuple[int, int, int] = (3, 3, 2)
    private_dim: int = 1638
    common_dim: int = 410
    transformer_layers: int = 2
    transformer_heads: int = 4
    shared_decoder: bool = True
    num_users: int = 50
    image_size: int = 32
    in_channels: int = 3

    @property
    def widths(self) -> Tuple[int, int, int]:
        return self.base_width, 2 * self.base_width, 4 * self.base_width

    @property
    def transformer_width(self) -> int:
        return 4 * self.base_width

    @property
    def private_only(self) -> bool:
        return self.common_dim == 0

    def validate(self):
        if self.base_width < 1:
            raise ConfigurationError(f"base_width must be >= 1, got {self.base_width}")
        if len(self.encoder_blocks) != 2 or len(self.decoder_blocks) != 3:
            raise ConfigurationError("encoder_blocks needs 2 stage counts and decoder_blocks 3")
        if min(self.encoder_blocks + self.decoder_blocks + (self.common_blocks,)) < 0:
            raise ConfigurationError("block counts must be non-negative")
        if self.private_dim < 1:
            raise ConfigurationError(f"private_dim must be >= 1, got {self.private_dim}")
        if self.common_dim < 0:
            raise ConfigurationError(f"common_dim must be >= 0, got {self.common_dim}")
        if self.transformer_layers < 1 or self.transformer_heads < 1:
            raise ConfigurationError("transformer_layers and transformer_heads must be >= 1")
        if self.transformer_width % self.transformer_heads != 0:
            raise ConfigurationError(
                f"transformer_heads={self.transformer_heads} does not divide "
                f"transformer width {self.transformer_width}")
        if self.image_size < 32 or self.image_size % 32 != 0:
            raise ConfigurationError(f"image_size must be a positive multiple of 32, got {self.image_size}")
        if self.in_channels < 1:
            raise ConfigurationError(f"in_channels must be >= 1, got {self.in_channels}")
        if not self.shared_decoder and self.num_users < 1:
            raise ConfigurationError("per-user decoders need num_users >= 1")
        return self


@dataclass(frozen=True)
class ChannelConfig:
    model: str = 'awgn'
    rician_r: float = 1.0
    interference: bool = True
    per_user_snr: bool = False

    def validate(self):
        if self.model not in CHANNEL_MODELS:
            raise ConfigurationError(f"unknown channel model '{self.model}', expected one of {CHANNEL_MODELS}")
        if self.model == 'rician' and not self.rician_r > 0:
            raise ConfigurationError(f"rician_r must be > 0, got {self.rician_r}")
        return self


@dataclass(frozen=True)
class LossWeights:
    lambda_repul: float = 0.1
    lambda_center: float = 0.01
    epsilon: float = 1e-3
    reconstruction: str = 'charbonnier'

    def validate(self):
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be > 0, got {self.epsilon}")
        for name in ('lambda_repul', 'lambda_center'):
            value = getattr(self, name)
            if not (value >= 0 and value != float('inf')):
                raise ConfigurationError(f"{name} must be finite and non-negative, got {value}")
        if self.reconstruction not in RECONSTRUCTION_LOSSES:
            raise ConfigurationError(f"unknown reconstruction loss '{self.reconstruction}'")
        return self


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 50
    groups: int = 10
    learning_rate: float = 1e-4
    snr_range_db: Tuple[float, float] = (12.0, 18.0)
    optimizer: str = 'adam'
    grad_clip: Optional[float] = None
    checkpoint_interval: int = 50
    grouping: str = 'balanced'
    normalize_for_clustering: bool = False
    kmeans_max_iters: int = 100
    deterministic: bool = True

    def validate(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1 or self.groups < 1:
            raise ConfigurationError("batch_size and groups must be >= 1")
        if self.batch_size % self.groups != 0:
            raise ConfigurationError(
                f"batch_size={self.batch_size} is not divisible by groups={self.groups}")
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning_rate must be >= 0, got {self.learning_rate}")
        low, high = self.snr_range_db
        if low > high:
            raise ConfigurationError(f"snr range low {low} > high {high}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer '{self.optimizer}'")
        if self.grouping not in GROUPINGS:
            raise ConfigurationError(f"unknown grouping '{self.grouping}'")
        if self.checkpoint_interval < 1:
            raise ConfigurationError("checkpoint_interval must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigurationError("grad_clip must be positive or null")
        return self


@dataclass(frozen=True)
class DataConfig:
    source: str = 'cifar10'
    root: str = './data'
    limit: Optional[int] = None
    download: bool = True

    def validate(self):
        if self.source not in DATA_SOURCES:
            raise ConfigurationError(f"unknown data source '{self.source}'")
        if self.limit is not None and self.limit < 1:
            raise ConfigurationError("data limit must be >= 1 or null")
        return self


@dataclass(frozen=True)
class LoggingConfig:
    wandb_project: str = 'group-semantic-splitting'
    wandb_mode: str = 'disabled'
    progress: bool = True

    def validate(self):
        if self.wandb_mode not in WANDB_MODES:
            raise ConfigurationError(f"unknown wandb mode '{self.wandb_mode}'")
        return self


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    symbols_per_image: int = 1024
    common_ratio: float = 0.2
    model: ModelConfig = field(default_factory=ModelConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    def validate(self):
        for part in (self.model, self.channel, self.loss, self.train, self.data, self.logging):
            part.validate()
        if self.model.private_dim % 2 or self.model.common_dim % 2:
            raise ConfigurationError(
                f"feature lengths must be even to map onto complex symbols "
                f"(private_dim={self.model.private_dim}, common_dim={self.model.common_dim})")
        if not self.model.shared_decoder and self.model.num_users != self.train.batch_size:
            raise ConfigurationError("per-user decoders need model.num_users == train.batch_size")
        return self

    def with_common_ratio(self, common_ratio: float) -> 'ExperimentConfig':
        '''same experiment with the symbol budget re-split; ratio 0 gives the private-only ablation'''
        private_dim, common_dim = feature_split(self.symbols_per_image, common_ratio)
        model = dataclasses.replace(self.model, private_dim=private_dim, common_dim=common_dim)
        return dataclasses.replace(self, common_ratio=common_ratio, model=model)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> 'ExperimentConfig':
        raw = dict(raw)
        sections = {'model': ModelConfig, 'channel': ChannelConfig, 'loss': LossWeights,
                    'train': TrainConfig, 'data': DataConfig, 'logging': LoggingConfig}
        kwargs = {}
        for name, cls in sections.items():
            section = dict(raw.pop(name, {}) or {})
            kwargs[name] = _build_section(cls, section, name)
        unknown = set(raw) - {f.name for f in dataclasses.fields(ExperimentConfig)}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        config = ExperimentConfig(**raw, **kwargs)

        # feature lengths default to the split of the symbol budget
        given = kwargs['model']
        private_dim, common_dim = feature_split(config.symbols_per_image, config.common_ratio)
        model = dataclasses.replace(
            given,
            private_dim=given.private_dim if given.private_dim is not None else private_dim,
            common_dim=given.common_dim if given.common_dim is not None else common_dim)
        return dataclasses.replace(config, model=model).validate()


def _build_section(cls, section: dict, name: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(section) - set(known)
    if unknown:
        raise ConfigurationError(f"unknown keys in '{name}': {sorted(unknown)}")
    for key, value in section.items():
        if isinstance(value, list):
            section[key] = tuple(value)
    if cls is ModelConfig:
        # absent feature lengths are filled from the symbol budget afterwards
        section.setdefault('private_dim', None)
        section.setdefault('common_dim', None)
    try:
        return cls(**section)
    except TypeError as e:
        raise ConfigurationError(f"invalid '{name}' section: {e}")


def load_config(path: str) -> ExperimentConfig:
    with open(path) as infile:
        try:
            raw = json.load(infile)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path} is not valid JSON: {e}")
    return ExperimentConfig.from_dict(raw)


def save_config(config: ExperimentConfig, path: str):
    with open(path, 'w') as outfile:
        json.dump(config.to_dict(), outfile, indent=2)
