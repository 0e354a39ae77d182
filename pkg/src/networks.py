'''
Semantic encoder, private encoder, group common encoder and semantic decoder.

Layer structure follows the semantic network table: ConvNeXt-style blocks (depthwise 7x7, pointwise
expansion to 4d, global response norm, pointwise projection, residual), stride-2 4x4 convolutions
between stages, transposed convolutions for upsampling, ReLU activations. All widths scale with
`base_width` (128 gives the 128/256/512 stages of the table).
'''
import dataclasses
from typing import Dict, List, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from config import ModelConfig
from errors import ConfigurationError, InputError

CHECKPOINT_FORMAT = 1


class GRN(nn.Module):
    '''global response normalization over the spatial grid (channels-first)'''

    def __init__(self, dim):
        super(GRN, self).__init__()
        self.gamma = nn.Parameter(torch.zeros(1, dim, 1, 1))
        self.beta = nn.Parameter(torch.zeros(1, dim, 1, 1))

    def forward(self, x):
        gx = torch.linalg.vector_norm(x, ord=2, dim=(2, 3), keepdim=True)
        nx = gx / (gx.mean(dim=1, keepdim=True) + 1e-6)
        return self.gamma * (x * nx) + self.beta + x


class ConvNeXtBlock(nn.Module):
    def __init__(self, dim):
        super(ConvNeXtBlock, self).__init__()
        self.dwconv = nn.Conv2d(dim, dim, kernel_size=7, padding=3, groups=dim)
        self.pwconv1 = nn.Conv2d(dim, 4 * dim, kernel_size=1)
        self.grn = GRN(4 * dim)
        self.pwconv2 = nn.Conv2d(4 * dim, dim, kernel_size=1)

    def forward(self, x):
        residual = x
        x = self.dwconv(x)
        x = F.relu(self.pwconv1(x))
        x = self.grn(x)
        x = self.pwconv2(x)
        return residual + x


def downsample(in_dim, out_dim):
    return nn.Sequential(nn.Conv2d(in_dim, out_dim, kernel_size=4, stride=2, padding=1), nn.ReLU())


def upsample(in_dim, out_dim):
    return nn.Sequential(nn.ConvTranspose2d(in_dim, out_dim, kernel_size=4, stride=2, padding=1), nn.ReLU())


def blocks(dim, count):
    return nn.Sequential(*[ConvNeXtBlock(dim) for _ in range(count)])


class SemanticEncoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super(SemanticEncoder, self).__init__()
        w0, w1, _ = config.widths
        n0, n1 = config.encoder_blocks
        self.layers = nn.Sequential(
            downsample(config.in_channels, w0), blocks(w0, n0),
            downsample(w0, w1), blocks(w1, n1),
        )

    def forward(self, images):
        return self.layers(images)


class PrivateEncoder(nn.Module):
    '''max-pool (kernel 4) then a dense layer to L_p'''

    def __init__(self, config: ModelConfig):
        super(PrivateEncoder, self).__init__()
        _, w1, _ = config.widths
        side = config.image_size // 16
        self.pool = nn.MaxPool2d(kernel_size=4)
        self.dense = nn.Linear(w1 * side * side, config.private_dim)

    def forward(self, z):
        return self.dense(torch.flatten(self.pool(z), start_dim=1))


class CommonEncoder(nn.Module):
    '''
    Each group member becomes one token (ConvNeXt stage + max-pool); the tokens pass through
    Transformer encoder layers without positional encoding and are mean-pooled, so the output does
    not depend on the order of the group members.
    '''

    def __init__(self, config: ModelConfig):
        super(CommonEncoder, self).__init__()
        _, w1, w2 = config.widths
        side = config.image_size // 32
        self.stage = nn.Sequential(downsample(w1, w2), blocks(w2, config.common_blocks))
        self.pool = nn.MaxPool2d(kernel_size=4)
        self.token_proj = nn.Identity() if side == 1 else nn.Linear(w2 * side * side, w2)
        layer = nn.TransformerEncoderLayer(d_model=config.transformer_width, nhead=config.transformer_heads,
                                           dim_feedforward=4 * config.transformer_width, dropout=0.0,
                                           activation='relu', batch_first=True)
        self.transformer = nn.TransformerEncoder(layer, num_layers=config.transformer_layers,
                                                 enable_nested_tensor=False)
        self.dense = nn.Linear(config.transformer_width, config.common_dim)

    def tokens(self, z):
        return self.token_proj(torch.flatten(self.pool(self.stage(z)), start_dim=1))

    def forward(self, z_groups):
        # z_groups: [G x n x C x h x w] -> [G x L_c]
        num_groups, members = z_groups.shape[:2]
        tokens = self.tokens(z_groups.flatten(0, 1)).view(num_groups, members, -1)
        return self.dense(self.transformer(tokens).mean(dim=1))


class SemanticDecoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super(SemanticDecoder, self).__init__()
        w0, w1, w2 = config.widths
        n0, n1, n2 = config.decoder_blocks
        self.side = config.image_size // 32
        self.width = w2
        self.dense = nn.Linear(config.common_dim + config.private_dim, w2 * self.side * self.side)
        self.layers = nn.Sequential(
            nn.Upsample(scale_factor=4, mode='bilinear', align_corners=False),
            upsample(w2, w1), blocks(w1, n0),
            upsample(w1, w0), blocks(w0, n1),
            upsample(w0, config.in_channels), blocks(config.in_channels, n2),
        )

    def forward(self, features):
        x = F.relu(self.dense(features)).view(-1, self.width, self.side, self.side)
        return self.layers(x)


class SemanticSplittingNet(nn.Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        super(SemanticSplittingNet, self).__init__()
        self.config = config
        self.seed = seed
        self.semantic_encoder = SemanticEncoder(config)
        self.private_encoder = PrivateEncoder(config)
        self.common_encoder = None if config.private_only else CommonEncoder(config)
        n_decoders = 1 if config.shared_decoder else config.num_users
        self.decoders = nn.ModuleList([SemanticDecoder(config) for _ in range(n_decoders)])

    def parameter_groups(self) -> Dict[str, List[nn.Parameter]]:
        '''trainable arrays split into encoder (beta), private (theta_p), common (theta_c) and decoder (phi)'''
        return {
            'beta': list(self.semantic_encoder.parameters()),
            'theta_p': list(self.private_encoder.parameters()),
            'theta_c': [] if self.common_encoder is None else list(self.common_encoder.parameters()),
            'phi': list(self.decoders.parameters()),
        }

    def semantic_encode(self, images):
        cfg = self.config
        expected = (cfg.in_channels, cfg.image_size, cfg.image_size)
        if images.dim() != 4 or tuple(images.shape[1:]) != expected:
            raise InputError(f"expected images of shape [K x {' x '.join(map(str, expected))}], "
                             f"got {list(images.shape)}")
        return self.semantic_encoder(images)

    def _check_semantic(self, z):
        w1 = self.config.widths[1]
        side = self.config.image_size // 4
        if tuple(z.shape[-3:]) != (w1, side, side):
            raise InputError(f"semantic tensor must end in [{w1} x {side} x {side}], got {list(z.shape)}")

    def private_encode(self, z):
        '''accepts a single semantic tensor [C x h x w] or a batch [K x C x h x w]'''
        self._check_semantic(z)
        if z.dim() == 3:
            return self.private_encoder(z.unsqueeze(0)).squeeze(0)
        return self.private_encoder(z)

    def common_encode(self, group_z):
        '''common feature of one group, group_z: [n x C x h x w] (or a list of n semantic tensors)'''
        if self.common_encoder is None:
            raise InputError("private-only model has no common encoder")
        if isinstance(group_z, (list, tuple)):
            if len(group_z) == 0:
                raise InputError("cannot encode an empty group")
            group_z = torch.stack(list(group_z))
        if group_z.dim() != 4 or group_z.shape[0] == 0:
            raise InputError(f"expected a non-empty group [n x C x h x w], got {list(group_z.shape)}")
        self._check_semantic(group_z)
        return self.common_encoder(group_z.unsqueeze(0)).squeeze(0)

    def common_encode_groups(self, z, groups: Sequence[Sequence[int]]):
        '''[G x L_c] common features; all groups must have the same size'''
        if self.common_encoder is None:
            raise InputError("private-only model has no common encoder")
        sizes = {len(g) for g in groups}
        if len(groups) == 0 or 0 in sizes:
            raise InputError("cannot encode an empty group")
        assert len(sizes) == 1, f"groups must be balanced, got sizes {sorted(sizes)}"
        index = torch.as_tensor([list(g) for g in groups], dtype=torch.long, device=z.device)
        return self.common_encoder(z[index])

    def _decoder(self, user_id: int):
        if self.config.shared_decoder:
            return self.decoders[0]
        if not 0 <= user_id < len(self.decoders):
            raise InputError(f"user_id {user_id} out of range for {len(self.decoders)} decoders")
        return self.decoders[user_id]

    def _decoder_input(self, c, p):
        cfg = self.config
        if p.shape[-1] != cfg.private_dim:
            raise InputError(f"private feature length {p.shape[-1]} != {cfg.private_dim}")
        if cfg.private_only:
            if c is not None and c.shape[-1] != 0:
                raise InputError("private-only model takes no common feature")
            return p
        if c is None or c.shape[-1] != cfg.common_dim:
            length = None if c is None else c.shape[-1]
            raise InputError(f"common feature length {length} != {cfg.common_dim}")
        return torch.cat([c, p], dim=-1)

    def semantic_decode(self, c, p, user_id: int = 0):
        '''reconstruction [C x H x W] of one user from CONCAT[c, p]'''
        features = self._decoder_input(c, p)
        return self._decoder(user_id)(features.unsqueeze(0)).squeeze(0)

    def decode(self, c, p, user_ids: Sequence[int]):
        '''batched decode: c [K x L_c] (or None), p [K x L_p] -> [K x C x H x W]'''
        features = self._decoder_input(c, p)
        if self.config.shared_decoder:
            return self.decoders[0](features)
        outputs = [self._decoder(int(u))(features[i:i + 1]) for i, u in enumerate(user_ids)]
        return torch.cat(outputs, dim=0)

    def save(self, path):
        torch.save({
            'format_version': CHECKPOINT_FORMAT,
            'model_config': dataclasses.asdict(self.config),
            'seed': self.seed,
            'model_state': self.state_dict(),
        }, path)

    @staticmethod
    def load(path):
        payload = torch.load(path, map_location='cpu')
        model = model_from_payload(payload)
        model.eval()
        return model


def model_from_payload(payload) -> SemanticSplittingNet:
    if payload.get('format_version') != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"unsupported checkpoint format {payload.get('format_version')}")
    raw = dict(payload['model_config'])
    for key in ('encoder_blocks', 'decoder_blocks'):
        raw[key] = tuple(raw[key])
    config = ModelConfig(**raw).validate()
    model = SemanticSplittingNet(config, seed=payload.get('seed', 0))
    model.load_state_dict(payload['model_state'])
    return model


def build_model(config: ModelConfig, seed: int) -> SemanticSplittingNet:
    '''deterministic initialization: the same (config, seed) always gives the same parameters'''
    config.validate()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = SemanticSplittingNet(config, seed=seed)
    return model
