import math
from typing import List

import torch
import torch.nn.functional as F

from ..utils.errors import ShapeMismatch
from .functional import bilinear_sample, coords_grid

__all__ = ['build_correlation', 'CorrelationPyramid', 'lookup_pyramid', 'global_match']


def build_correlation(g1: torch.Tensor, g2: torch.Tensor) -> torch.Tensor:
    """C[b, i, j, k, l] = <g1[b, :, i, j], g2[b, :, k, l]> / sqrt(D)."""
    if g1.shape != g2.shape:
        raise ShapeMismatch(f'feature maps differ: {tuple(g1.shape)} vs {tuple(g2.shape)}')
    dim = g1.shape[1]
    return torch.einsum('bdij,bdkl->bijkl', g1, g2) / math.sqrt(dim)


class CorrelationPyramid:
    """Correlation volume mean-pooled over the target dimensions at scales 2^k."""

    def __init__(self, corr: torch.Tensor, num_levels: int = 4):
        if corr.dim() != 5:
            raise ShapeMismatch(f'expected a B x H x W x H x W volume, got {tuple(corr.shape)}')
        self.batch, self.height, self.width = corr.shape[:3]
        self.num_levels = num_levels
        volume = corr.reshape(self.batch * self.height * self.width, 1, *corr.shape[3:])
        self.levels: List[torch.Tensor] = [volume]
        for _ in range(num_levels - 1):
            volume = F.avg_pool2d(volume, kernel_size=2, stride=2, ceil_mode=True)
            self.levels.append(volume)

    def __len__(self):
        return self.num_levels

    def level(self, k: int) -> torch.Tensor:
        """Level k as B x H x W x H_k x W_k."""
        volume = self.levels[k]
        return volume.reshape(self.batch, self.height, self.width, *volume.shape[-2:])


def lookup_pyramid(pyramid: CorrelationPyramid, flow: torch.Tensor, radius: int) -> torch.Tensor:
    """Window lookup around position + flow on every level.

    flow: B x 2 x H x W in latent pixels. Returns B x (levels * (2r+1)^2) x H x W,
    ordered level-major, then window row (dy), then window column (dx).
    """
    if radius < 0:
        raise ValueError(f'radius must be >= 0, got {radius}')
    b, _, h, w = flow.shape
    if (b, h, w) != (pyramid.batch, pyramid.height, pyramid.width):
        raise ShapeMismatch(f'flow {tuple(flow.shape)} does not match the pyramid')
    side = 2 * radius + 1
    offsets = torch.arange(-radius, radius + 1, dtype=flow.dtype, device=flow.device)
    dy, dx = torch.meshgrid(offsets, offsets, indexing='ij')
    delta = torch.stack([dx, dy], dim=-1).view(1, side, side, 2)

    centers = coords_grid(b, h, w, dtype=flow.dtype, device=flow.device) + flow
    centers = centers.permute(0, 2, 3, 1).reshape(b * h * w, 1, 1, 2)

    features = []
    for k, volume in enumerate(pyramid.levels):
        sampled = bilinear_sample(volume, centers / 2 ** k + delta)
        features.append(sampled.view(b, h, w, side * side))
    return torch.cat(features, dim=-1).permute(0, 3, 1, 2).contiguous()


def global_match(corr: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Softmax matching over all target positions.

    f[i, j] = sum_{k,l} softmax(C[i, j] / temperature)[k, l] * ((l, k) - (j, i)).
    Returns B x 2 x H x W.
    """
    b, h, w = corr.shape[:3]
    prob = torch.softmax(corr.reshape(b, h * w, -1) / temperature, dim=-1)
    target = coords_grid(b, corr.shape[3], corr.shape[4], dtype=corr.dtype, device=corr.device)
    target = target.reshape(b, 2, -1).transpose(1, 2)
    matched = torch.bmm(prob, target).transpose(1, 2).reshape(b, 2, h, w)
    return matched - coords_grid(b, h, w, dtype=corr.dtype, device=corr.device)
