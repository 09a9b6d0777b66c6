import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import pytorch_lightning as pl
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader, Dataset

from ..modules.functional import bilinear_sample, coords_grid
from ..utils.errors import ConfigError

__all__ = ['FAMILIES', 'SPLIT_OFFSETS', 'GenConfig', 'SamplePair', 'value_noise', 'make_flow', 'valid_mask',
           'gen_pair', 'SyntheticFlowDataset', 'SyntheticFlowDataModule']

FAMILIES = ('translation', 'affine', 'gaussian', 'mixed')
SPLIT_OFFSETS = {'train': 0, 'val': 1_000_000, 'test': 2_000_000}


@dataclass
class GenConfig:
    seed: int = 0
    height: int = 64
    width: int = 64
    family: str = 'translation'
    max_disp: float = 4.0
    octaves: int = 4
    translation: Optional[Tuple[float, float]] = None
    num_blobs: int = 3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f'Unknown flow family = "{self.family}"')
        if self.height < 1 or self.width < 1:
            raise ConfigError(f'invalid extents {self.height}x{self.width}')
        if not 0 <= self.max_disp <= min(self.height, self.width) / 4:
            raise ConfigError(f'max_disp={self.max_disp} must lie in [0, min(H, W) / 4]')
        if self.octaves < 1:
            raise ConfigError(f'octaves must be >= 1, got {self.octaves}')
        if self.translation is not None:
            self.translation = tuple(float(v) for v in self.translation)
            if len(self.translation) != 2 or math.hypot(*self.translation) > self.max_disp + 1e-12:
                raise ConfigError(f'translation {self.translation} exceeds max_disp={self.max_disp}')

    def with_seed(self, seed: int) -> 'GenConfig':
        return dataclasses.replace(self, seed=seed)


@dataclass
class SamplePair:
    image1: torch.Tensor
    image2: torch.Tensor
    flow: torch.Tensor
    valid: torch.Tensor
    seed: int = 0

    def as_tuple(self):
        return self.image1, self.image2, self.flow, self.valid


def value_noise(generator: torch.Generator, channels: int, height: int, width: int, octaves: int,
                base_cells: int = 4) -> torch.Tensor:
    """Multi-octave value noise in [0, 1], channels x H x W (float64)."""
    image = torch.zeros(channels, height, width, dtype=torch.float64)
    amplitude = 1.0
    for octave in range(octaves):
        cells = base_cells * 2 ** octave
        lattice = torch.rand(1, channels, cells + 1, cells + 1, generator=generator, dtype=torch.float64)
        layer = F.interpolate(lattice, size=(height, width), mode='bilinear', align_corners=True)[0]
        image += amplitude * layer
        amplitude *= 0.5
    lo, hi = image.min(), image.max()
    return (image - lo) / (hi - lo).clamp_min(1e-12)


def _uniform(generator, low=0.0, high=1.0, size=()):
    return low + (high - low) * torch.rand(size, generator=generator, dtype=torch.float64)


def make_flow(config: GenConfig, generator: torch.Generator) -> torch.Tensor:
    """Smooth 2 x H x W flow from the configured family with max |f| <= max_disp."""
    h, w = config.height, config.width
    family = config.family
    if family == 'mixed':
        # alternates over consecutive seeds
        family = 'translation' if config.seed % 2 == 0 else 'gaussian'
    grid = coords_grid(1, h, w, dtype=torch.float64)[0]

    if family == 'translation':
        if config.translation is not None:
            vec = torch.tensor(config.translation, dtype=torch.float64)
            return vec.view(2, 1, 1).expand(2, h, w).clone()
        angle = _uniform(generator, 0, 2 * math.pi)
        magnitude = _uniform(generator, 0.25, 1.0) * config.max_disp
        vec = torch.stack([torch.cos(angle), torch.sin(angle)]) * magnitude
        return vec.view(2, 1, 1).expand(2, h, w).clone()

    if family == 'affine':
        center = torch.tensor([(w - 1) / 2, (h - 1) / 2], dtype=torch.float64).view(2, 1, 1)
        matrix = _uniform(generator, -0.1, 0.1, (2, 2))
        offset = _uniform(generator, -1.0, 1.0, (2,)) * config.max_disp
        flow = torch.einsum('ij,jhw->ihw', matrix, grid - center) + offset.view(2, 1, 1)
    else:
        flow = torch.zeros(2, h, w, dtype=torch.float64)
        scale = min(h, w)
        for _ in range(config.num_blobs):
            center = torch.stack([_uniform(generator, 0, w - 1), _uniform(generator, 0, h - 1)]).view(2, 1, 1)
            sigma = _uniform(generator, 0.1, 0.3) * scale
            vec = _uniform(generator, -1.0, 1.0, (2,)) * config.max_disp
            weight = torch.exp(-((grid - center) ** 2).sum(dim=0) / (2 * sigma ** 2))
            flow += vec.view(2, 1, 1) * weight

    peak = float(flow.pow(2).sum(dim=0).sqrt().max())
    if peak > config.max_disp and peak > 0:
        flow = flow * (config.max_disp / peak)
    return flow


def valid_mask(flow: torch.Tensor) -> torch.Tensor:
    """Pixels whose target x + f(x) lands inside the frame."""
    _, h, w = flow.shape
    target = coords_grid(1, h, w, dtype=flow.dtype, device=flow.device)[0] + flow
    return (target[0] >= 0) & (target[0] <= w - 1) & (target[1] >= 0) & (target[1] <= h - 1)


def gen_pair(config: GenConfig, dtype=torch.float32) -> SamplePair:
    """Textured frame 2 and frame 1 backward-warped from it: I1(x) = I2(x + f(x))."""
    generator = torch.Generator().manual_seed(int(config.seed))
    image2 = value_noise(generator, 3, config.height, config.width, config.octaves).to(dtype)
    flow = make_flow(config, generator).to(dtype)
    coords = coords_grid(1, config.height, config.width, dtype=dtype)[0] + flow
    image1 = bilinear_sample(image2[None], coords.permute(1, 2, 0)[None])[0]
    return SamplePair(image1=image1, image2=image2, flow=flow, valid=valid_mask(flow), seed=int(config.seed))


class SyntheticFlowDataset(Dataset):
    def __init__(self, config: GenConfig, length: int, seed_offset: int = 0):
        self.config = config
        self.length = length
        self.seed_offset = seed_offset

    def __len__(self):
        return self.length

    def seed(self, index: int) -> int:
        return self.config.seed + self.seed_offset + index

    def pair(self, index: int) -> SamplePair:
        if not 0 <= index < self.length:
            raise IndexError(index)
        return gen_pair(self.config.with_seed(self.seed(index)))

    def __getitem__(self, index):
        return self.pair(index).as_tuple()


class SyntheticFlowDataModule(pl.LightningDataModule):
    def __init__(self, batch_size: int, height: int, width: int, family: str, max_disp: float, octaves: int = 4,
                 num_workers: int = 0, seed: int = 0, train_size: int = 0, val_size: int = 16, test_size: int = 32,
                 translation: Optional[Sequence[float]] = None, num_blobs: int = 3):
        super().__init__()
        self.batch_size = batch_size
        self.num_workers = num_workers
        self.seed = seed
        self.gen = GenConfig(seed=seed, height=height, width=width, family=family, max_disp=max_disp,
                             octaves=octaves, translation=None if translation is None else tuple(translation),
                             num_blobs=num_blobs)
        self.sizes = {'train': train_size, 'val': val_size, 'test': test_size}

    def split(self, name: str) -> SyntheticFlowDataset:
        return SyntheticFlowDataset(self.gen, self.sizes[name], seed_offset=SPLIT_OFFSETS[name])

    def setup(self, stage=None) -> None:
        logging.debug(f'synthetic data seed={self.seed}, sizes={self.sizes}')
        if stage == 'fit' or stage is None:
            self.train_dataset = self.split('train')
            self.val_dataset = self.split('val')
        if stage == 'test' or stage is None:
            self.test_dataset = self.split('test')

    def dataloader(self, dataset: SyntheticFlowDataset) -> DataLoader:
        return DataLoader(
            dataset,
            batch_size=self.batch_size,
            shuffle=False,
            num_workers=self.num_workers,
            worker_init_fn=lambda worker_id: np.random.seed(self.seed + worker_id))

    def train_dataloader(self) -> DataLoader:
        return self.dataloader(self.train_dataset)

    def val_dataloader(self) -> DataLoader:
        return self.dataloader(self.val_dataset)

    def test_dataloader(self) -> DataLoader:
        return self.dataloader(self.test_dataset)
