import torch
import torch.nn as nn

from ..utils.errors import ShapeMismatch
from .functional import ParamSet, param_set
from .layers import AttentionBlock, ConvGRUCell

__all__ = ['TransformerRHS', 'GruOdeRHS']


class TransformerRHS(nn.Module):
    """g(h, t): one attention block over the flattened latent grid, t appended as a channel."""

    def __init__(self, dim: int, zero_init: bool = False):
        super().__init__()
        self.dim = dim
        self.time_proj = nn.Linear(dim + 1, dim)
        self.block = AttentionBlock(dim)
        if zero_init:
            self.block.zero_init_outputs()

    def sequence(self, t: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
        # x: B x L x d
        if x.shape[-1] != self.dim:
            raise ShapeMismatch(f'rhs has width {self.dim}, got {tuple(x.shape)}')
        tt = torch.as_tensor(t, dtype=x.dtype, device=x.device).reshape(1, 1, 1).expand(*x.shape[:2], 1)
        return self.block(self.time_proj(torch.cat([x, tt], dim=-1)))

    def forward(self, t: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        b, d, height, width = h.shape
        x = h.flatten(2).transpose(1, 2)
        out = self.sequence(t, x)
        return out.transpose(1, 2).reshape(b, d, height, width)

    def ode_params(self) -> ParamSet:
        return param_set(self)


class GruOdeRHS(nn.Module):
    """dh/dt = (1 - z(x, h)) * (q(x, h) - h) with the input x held fixed over the solve."""

    def __init__(self, cell: ConvGRUCell, inputs: torch.Tensor):
        super().__init__()
        self.cell = cell
        self.inputs = inputs

    def forward(self, t: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        return self.cell.ode_rhs(h, self.inputs)

    def ode_params(self) -> ParamSet:
        return param_set(self, extra={'inputs': self.inputs})
