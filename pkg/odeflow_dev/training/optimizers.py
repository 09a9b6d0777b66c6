import logging
from typing import Iterable, Sequence

import torch
from torch.optim import AdamW, Optimizer

__all__ = ['adamw_factory', 'grads_finite', 'optimizer_step']


def adamw_factory(lr: float, weight_decay: float, betas: Sequence[float] = (0.9, 0.999), eps: float = 1e-8):
    return lambda params: AdamW(params, lr=lr, weight_decay=weight_decay, betas=tuple(betas), eps=eps)


def grads_finite(params: Iterable[torch.Tensor]) -> bool:
    return all(bool(torch.isfinite(p.grad).all()) for p in params if p.grad is not None)


def optimizer_step(optimizer: Optimizer) -> bool:
    """Apply the update unless a gradient is non-finite; the gradients are cleared either way."""
    params = [p for group in optimizer.param_groups for p in group['params']]
    if not grads_finite(params):
        logging.warning('non-finite gradient, step rejected')
        optimizer.zero_grad()
        return False
    optimizer.step()
    optimizer.zero_grad()
    return True
