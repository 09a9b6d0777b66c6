import math
from typing import Optional, Tuple

import torch
import torch.nn as nn

from ..utils.errors import ShapeMismatch
from .functional import conv2d, elementwise

__all__ = ['AttentionBlock', 'ConvLayer', 'FeatureEncoder', 'MixingNetwork', 'FlowHead', 'ConvGRUCell']


class AttentionBlock(nn.Module):
    """Single-head pre-norm transformer block, MLP hidden width equal to the model width."""

    def __init__(self, dim: int, mlp_dim: Optional[int] = None):
        super().__init__()
        self.dim = dim
        self.mlp_dim = mlp_dim if mlp_dim is not None else dim
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, num_heads=1, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(nn.Linear(dim, self.mlp_dim), nn.ReLU(), nn.Linear(self.mlp_dim, dim))

    def zero_init_outputs(self):
        nn.init.zeros_(self.attn.out_proj.weight)
        nn.init.zeros_(self.attn.out_proj.bias)
        nn.init.zeros_(self.mlp[-1].weight)
        nn.init.zeros_(self.mlp[-1].bias)

    def forward(self, x: torch.Tensor, return_attention: bool = False):
        # x: B x L x d
        if x.shape[-1] != self.dim:
            raise ShapeMismatch(f'attention block has width {self.dim}, got input {tuple(x.shape)}')
        normed = self.norm1(x)
        attended, weights = self.attn(normed, normed, normed, need_weights=return_attention,
                                      average_attn_weights=True)
        y = x + attended
        out = y + self.mlp(self.norm2(y))
        if return_attention:
            return out, weights
        return out


class ConvLayer(nn.Module):
    """nn.Conv2d parameters routed through the checked conv2d."""

    def __init__(self, inc: int, outc: int, ks: int = 3, stride: int = 1, padding: Optional[int] = None):
        super().__init__()
        self.inc = inc
        self.outc = outc
        self.ks = ks
        self.stride = stride
        self.padding = ks // 2 if padding is None else padding
        self.conv = nn.Conv2d(inc, outc, kernel_size=ks, stride=stride, padding=self.padding)

    def __repr__(self):
        return 'ConvLayer(inc=%d, outc=%d, ks=%d, stride=%d, padding=%d)' % (self.inc, self.outc, self.ks,
                                                                           self.stride, self.padding)

    def zero_init(self):
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def forward(self, x):
        return conv2d(x, self.conv.weight, self.conv.bias, padding=self.padding, stride=self.stride)


class FeatureEncoder(nn.Module):
    """Strided conv stack downsampling by n (a power of two)."""

    def __init__(self, out_dim: int, downsample: int = 8, width: int = 32, in_channels: int = 3):
        super().__init__()
        num_stages = int(round(math.log2(downsample)))
        if 2 ** num_stages != downsample:
            raise ShapeMismatch(f'downsample factor must be a power of two, got {downsample}')
        self.downsample = downsample
        self.stem = ConvLayer(in_channels, width, ks=3)
        self.stages = nn.ModuleList([ConvLayer(width, width, ks=3, stride=2) for _ in range(num_stages)])
        self.proj = ConvLayer(width, out_dim, ks=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        h, w = image.shape[-2:]
        if h % self.downsample != 0 or w % self.downsample != 0:
            raise ShapeMismatch(f'image extents {h}x{w} are not divisible by n={self.downsample}')
        x = elementwise(self.stem(2 * image - 1), 'relu')
        for stage in self.stages:
            x = elementwise(stage(x), 'relu')
        return self.proj(x)


class MixingNetwork(nn.Module):
    """M([q, f, C]) -> latent of d_hid channels, one conv or conv-relu-conv."""

    def __init__(self, d_inp: int, d_hid: int, corr_channels: int, depth: int = 2, ks: int = 5):
        super().__init__()
        if depth not in (1, 2):
            raise ValueError(f'mixing depth must be 1 or 2, got {depth}')
        self.d_inp = d_inp
        self.d_hid = d_hid
        self.depth = depth
        self.flow_lift = ConvLayer(2, d_inp, ks=1)
        self.corr_proj = ConvLayer(corr_channels, d_hid, ks=1)
        inc = 2 * d_inp + d_hid
        if depth == 1:
            self.layers = nn.ModuleList([ConvLayer(inc, d_hid, ks=ks)])
        else:
            self.layers = nn.ModuleList([ConvLayer(inc, 2 * d_hid, ks=ks), ConvLayer(2 * d_hid, d_hid, ks=ks)])

    def mix(self, x: torch.Tensor) -> torch.Tensor:
        x = self.layers[0](x)
        for layer in self.layers[1:]:
            x = layer(elementwise(x, 'relu'))
        return x

    def concat(self, q: torch.Tensor, flow: torch.Tensor, corr_feat: torch.Tensor) -> torch.Tensor:
        if q.shape[1] != self.d_inp:
            raise ShapeMismatch(f'context has {q.shape[1]} channels, expected {self.d_inp}')
        return torch.cat([q, self.flow_lift(flow), self.corr_proj(corr_feat)], dim=1)

    def forward(self, q: torch.Tensor, flow: torch.Tensor, corr_feat: torch.Tensor) -> torch.Tensor:
        return self.mix(self.concat(q, flow, corr_feat))


class FlowHead(nn.Module):
    def __init__(self, d_hid: int, zero_init: bool = True):
        super().__init__()
        self.conv1 = ConvLayer(d_hid, d_hid, ks=3)
        self.conv2 = ConvLayer(d_hid, 2, ks=3)
        if zero_init:
            self.conv2.zero_init()

    def forward(self, h):
        return self.conv2(elementwise(self.conv1(h), 'relu'))


class ConvGRUCell(nn.Module):
    """h' = z * h + (1 - z) * q~, with z the keep gate."""

    def __init__(self, hidden_dim: int, input_dim: int, ks: int = 3):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.input_dim = input_dim
        self.convz = ConvLayer(hidden_dim + input_dim, hidden_dim, ks=ks)
        self.convr = ConvLayer(hidden_dim + input_dim, hidden_dim, ks=ks)
        self.convq = ConvLayer(hidden_dim + input_dim, hidden_dim, ks=ks)

    def gates(self, h: torch.Tensor, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        hx = torch.cat([h, x], dim=1)
        z = elementwise(self.convz(hx), 'sigmoid')
        r = elementwise(self.convr(hx), 'sigmoid')
        q = elementwise(self.convq(torch.cat([r * h, x], dim=1)), 'tanh')
        return z, q

    def ode_rhs(self, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        z, q = self.gates(h, x)
        return (1 - z) * (q - h)

    def forward(self, h: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        z, q = self.gates(h, x)
        return z * h + (1 - z) * q
