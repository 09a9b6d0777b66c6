from typing import Optional

import torch
from torchmetrics import Metric

from .errors import EmptyMaskError, ShapeMismatch

__all__ = ['endpoint_error', 'epe', 'fl_all', 'EndPointError', 'FlAll']


def _check(pred: torch.Tensor, gt: torch.Tensor, valid: Optional[torch.Tensor]) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ShapeMismatch(f'prediction {tuple(pred.shape)} does not match ground truth {tuple(gt.shape)}')
    channel = pred.dim() - 3
    spatial = gt.shape[:channel] + gt.shape[channel + 1:]
    if valid is None:
        valid = torch.ones(spatial, dtype=torch.bool, device=gt.device)
    if valid.shape != spatial:
        raise ShapeMismatch(f'mask {tuple(valid.shape)} does not match flow {tuple(gt.shape)}')
    return valid.bool()


def endpoint_error(pred: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-pixel Euclidean error; flows are [B x] 2 x H x W."""
    channel = pred.dim() - 3
    return (pred - gt).pow(2).sum(dim=channel).sqrt()


def epe(pred: torch.Tensor, gt: torch.Tensor, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    valid = _check(pred, gt, valid)
    if not bool(valid.any()):
        raise EmptyMaskError('no valid pixels')
    return endpoint_error(pred, gt)[valid].mean()


def _outliers(pred, gt):
    channel = pred.dim() - 3
    err = endpoint_error(pred, gt)
    mag = gt.pow(2).sum(dim=channel).sqrt()
    return (err > 3.0) & (err > 0.05 * mag)


def fl_all(pred: torch.Tensor, gt: torch.Tensor, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Percent of valid pixels whose error exceeds both 3 px and 5% of |gt|."""
    valid = _check(pred, gt, valid)
    if not bool(valid.any()):
        raise EmptyMaskError('no valid pixels')
    return 100.0 * _outliers(pred, gt)[valid].double().mean()


class EndPointError(Metric):
    full_state_update = False

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.add_state('total', default=torch.tensor(0.0, dtype=torch.float64), dist_reduce_fx='sum')
        self.add_state('count', default=torch.tensor(0), dist_reduce_fx='sum')

    def update(self, pred: torch.Tensor, gt: torch.Tensor, valid: Optional[torch.Tensor] = None):
        valid = _check(pred, gt, valid)
        self.total += endpoint_error(pred, gt)[valid].double().sum()
        self.count += valid.sum()

    def compute(self):
        if int(self.count) == 0:
            raise EmptyMaskError('no valid pixels')
        return self.total / self.count


class FlAll(Metric):
    full_state_update = False

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.add_state('outliers', default=torch.tensor(0), dist_reduce_fx='sum')
        self.add_state('count', default=torch.tensor(0), dist_reduce_fx='sum')

    def update(self, pred: torch.Tensor, gt: torch.Tensor, valid: Optional[torch.Tensor] = None):
        valid = _check(pred, gt, valid)
        self.outliers += _outliers(pred, gt)[valid].sum()
        self.count += valid.sum()

    def compute(self):
        if int(self.count) == 0:
            raise EmptyMaskError('no valid pixels')
        return 100.0 * self.outliers.double() / self.count
