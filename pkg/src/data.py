import math
from dataclasses import dataclass, field
from typing import List

import torch

from config import DataConfig
from errors import InputError


@dataclass
class SourceBatch:
    '''K users' source images, one per row, values in [0, 1]'''
    images: torch.Tensor
    user_ids: List[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.user_ids:
            self.user_ids = list(range(self.images.shape[0]))

    @property
    def K(self) -> int:
        return self.images.shape[0]

    def validate(self, num_groups: int):
        if self.images.dim() != 4 or self.K == 0:
            raise InputError(f"expected a non-empty [K x C x H x W] batch, got {list(self.images.shape)}")
        if len(self.user_ids) != self.K:
            raise InputError(f"{len(self.user_ids)} user ids for {self.K} images")
        if self.K % num_groups != 0:
            raise InputError(f"K={self.K} is not divisible by G={num_groups}")
        if self.images.min() < 0 or self.images.max() > 1:
            raise InputError("source images must lie in [0, 1]")
        return self


def batch_iterable(iterable, n=1, drop_last=True):
    l = len(iterable)
    end = l - l % n if drop_last else l
    for ndx in range(0, end, n):
        yield iterable[ndx:min(ndx + n, l)]


def epoch_batches(images, batch_size: int, seed: int, epoch: int, shuffle: bool = True):
    '''
    fixed-size batches of one epoch; the order depends only on (seed, epoch) so that a resumed run
    sees the same batches. the final partial batch is dropped.
    '''
    if shuffle:
        generator = torch.Generator()
        generator.manual_seed(seed * 100003 + epoch)
        order = torch.randperm(images.shape[0], generator=generator)
    else:
        order = torch.arange(images.shape[0])
    for index in batch_iterable(order, batch_size):
        yield images[index]


def synthetic_images(n: int, seed: int = 0, size: int = 32, channels: int = 3):
    '''
    smooth random images in [0, 1]: a colour gradient plus a few soft blobs per image.
    a stand-in for CIFAR10 when no download is possible.
    '''
    generator = torch.Generator()
    generator.manual_seed(seed)
    coords = torch.linspace(0, 1, size)
    yy, xx = torch.meshgrid(coords, coords, indexing='ij')

    base = torch.rand(n, channels, 1, 1, generator=generator)
    slope = (torch.rand(n, channels, 2, generator=generator) - 0.5)
    images = base + slope[..., 0, None, None] * xx + slope[..., 1, None, None] * yy
    for _ in range(3):
        center = torch.rand(n, 2, generator=generator)
        width = 0.05 + 0.15 * torch.rand(n, generator=generator)
        colour = torch.rand(n, channels, generator=generator) - 0.5
        d2 = (xx - center[:, 0, None, None]) ** 2 + (yy - center[:, 1, None, None]) ** 2
        blob = torch.exp(-d2 / (2 * width[:, None, None] ** 2))
        images = images + colour[:, :, None, None] * blob.unsqueeze(1)
    return images.clamp(0.0, 1.0)


def load_cifar10(root: str, train: bool = True, limit: int = None, download: bool = True):
    '''CIFAR10 images as one [N x 3 x 32 x 32] tensor in [0, 1]'''
    from torchvision import datasets

    dataset = datasets.CIFAR10(root=root, train=train, download=download)
    images = torch.from_numpy(dataset.data).permute(0, 3, 1, 2).float() / 255.0
    if limit is not None:
        images = images[:limit]
    return images


def load_images(config: DataConfig, train: bool = True, seed: int = 0, image_size: int = 32):
    if config.source == 'cifar10':
        if image_size != 32:
            raise InputError(f"CIFAR10 images are 32x32, model expects {image_size}")
        return load_cifar10(config.root, train=train, limit=config.limit, download=config.download)
    n = config.limit if config.limit is not None else 2000
    # separate draws for the training and held-out splits
    return synthetic_images(n, seed=seed if train else seed + 1, size=image_size)


def num_batches(n_images: int, batch_size: int) -> int:
    return math.floor(n_images / batch_size)
