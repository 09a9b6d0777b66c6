from typing import Optional, Sequence

import torch
from torch import nn

from ..utils.errors import ConfigError, EmptyMaskError, ShapeMismatch

__all__ = ['masked_l1', 'flow_loss', 'SequenceL1Loss', 'sequence_l1_factory']


def _valid_mask(flow_gt: torch.Tensor, valid: Optional[torch.Tensor]) -> torch.Tensor:
    if valid is None:
        return torch.ones(flow_gt.shape[0], *flow_gt.shape[2:], dtype=torch.bool, device=flow_gt.device)
    if valid.shape != (flow_gt.shape[0], *flow_gt.shape[2:]):
        raise ShapeMismatch(f'mask {tuple(valid.shape)} does not match flow {tuple(flow_gt.shape)}')
    return valid.bool()


def masked_l1(pred: torch.Tensor, flow_gt: torch.Tensor, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean over valid pixels of |dx| + |dy|."""
    if pred.shape != flow_gt.shape:
        raise ShapeMismatch(f'prediction {tuple(pred.shape)} does not match ground truth {tuple(flow_gt.shape)}')
    valid = _valid_mask(flow_gt, valid)
    count = valid.sum()
    if int(count) == 0:
        raise EmptyMaskError('no valid pixels')
    per_pixel = (pred - flow_gt).abs().sum(dim=1)
    return (per_pixel * valid).sum() / count


def flow_loss(predictions: Sequence[torch.Tensor], flow_gt: torch.Tensor, valid: Optional[torch.Tensor] = None,
              gamma: float = 0.9) -> torch.Tensor:
    """sum_i gamma^(N - i) * masked_l1(f_i), i = 1..N, the last prediction weighted 1."""
    if len(predictions) < 1:
        raise ValueError('flow_loss needs at least one prediction')
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f'gamma must lie in (0, 1], got {gamma}')
    num = len(predictions)
    loss = None
    for i, pred in enumerate(predictions, start=1):
        term = masked_l1(pred, flow_gt, valid)
        if i < num:
            term = gamma ** (num - i) * term
        loss = term if loss is None else loss + term
    return loss


class SequenceL1Loss(nn.Module):
    def __init__(self, gamma: float = 0.9):
        super().__init__()
        if not 0.0 < gamma <= 1.0:
            raise ConfigError(f'gamma must lie in (0, 1], got {gamma}')
        self.gamma = gamma

    def forward(self, predictions, flow_gt, valid=None):
        return flow_loss(predictions, flow_gt, valid, gamma=self.gamma)


def sequence_l1_factory(gamma: float):
    return SequenceL1Loss(gamma=gamma)
