'''
Feature extractors for the perceptual loss. Any nn.Module that maps [N x 3 x H x W] images in [0, 1]
to a list of activation tensors fits the plugin interface.

`FixedConvFeatures` is the deterministic default: a small ReLU conv net whose weights are drawn from
a fixed seed, so every checkout computes the same numbers without downloads. `VGGFeatures` wraps
torchvision's VGG16 at named ReLU layers, with ImageNet weights or a local state dict.
'''
from typing import List, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from errors import ConfigurationError, InputError

FIXED_FEATURES_SEED = 1234

VGG16_LAYERS = {'relu1_2': 3, 'relu2_2': 8, 'relu3_3': 15, 'relu4_3': 22, 'relu5_3': 29}


class FixedConvFeatures(nn.Module):
    def __init__(self, widths=(16, 32, 64), seed: int = FIXED_FEATURES_SEED):
        super(FixedConvFeatures, self).__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            stages, in_dim = [], 3
            for i, width in enumerate(widths):
                stage = [nn.Conv2d(in_dim, width, kernel_size=3, padding=1), nn.ReLU(),
                         nn.Conv2d(width, width, kernel_size=3, padding=1), nn.ReLU()]
                if i < len(widths) - 1:
                    stage.append(nn.MaxPool2d(kernel_size=2))
                stages.append(nn.Sequential(*stage))
                in_dim = width
        self.stages = nn.ModuleList(stages)
        self.layers = [f"block{i + 1}" for i in range(len(widths))]
        self.requires_grad_(False)
        self.eval()

    def forward(self, x) -> List[torch.Tensor]:
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return features


class VGGFeatures(nn.Module):
    def __init__(self, layers: Sequence[str] = ('relu1_2', 'relu2_2', 'relu3_3'),
                 weights_path: str = None, pretrained: bool = False):
        super(VGGFeatures, self).__init__()
        from torchvision.models import VGG16_Weights, vgg16

        unknown = [name for name in layers if name not in VGG16_LAYERS]
        if unknown or not layers:
            raise ConfigurationError(f"unknown VGG16 layers {unknown}, expected some of {list(VGG16_LAYERS)}")
        net = vgg16(weights=VGG16_Weights.IMAGENET1K_V1 if pretrained else None)
        if weights_path is not None:
            net.load_state_dict(torch.load(weights_path, map_location='cpu'))
        elif not pretrained:
            print(" ==> VGG16 feature net without weights: perceptual values are not comparable")
        self.indices = sorted(VGG16_LAYERS[name] for name in layers)
        self.features = net.features[:self.indices[-1] + 1]
        self.layers = list(layers)
        self.register_buffer('mean', torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer('std', torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def forward(self, x) -> List[torch.Tensor]:
        x = (x - self.mean) / self.std
        features = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.indices:
                features.append(x)
        return features


def build_feature_net(name: str = 'fixed', layers: Sequence[str] = None, weights_path: str = None,
                      pretrained: bool = False) -> nn.Module:
    if name == 'fixed':
        return FixedConvFeatures()
    if name == 'vgg16':
        return VGGFeatures(layers or ('relu1_2', 'relu2_2', 'relu3_3'), weights_path=weights_path,
                           pretrained=pretrained)
    raise ConfigurationError(f"unknown perceptual feature net '{name}'")


def perceptual_loss(s, s_hat, feature_net: nn.Module):
    '''mean over the designated layers of the mean squared activation difference'''
    if feature_net is None:
        raise ConfigurationError("perceptual loss needs a feature net")
    if s.shape != s_hat.shape:
        raise InputError(f"shape mismatch: {list(s.shape)} vs {list(s_hat.shape)}")
    if s.dim() == 3:
        s, s_hat = s.unsqueeze(0), s_hat.unsqueeze(0)
    feature_net = feature_net.to(s.dtype)
    with torch.no_grad():
        pairs = zip(feature_net(s), feature_net(s_hat))
        distances = [F.mse_loss(a, b) for a, b in pairs]
    return torch.stack(distances).mean()
