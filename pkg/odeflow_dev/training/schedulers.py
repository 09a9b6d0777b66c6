import functools
import math

from torch.optim.lr_scheduler import LambdaLR

__all__ = ['lr_lambda', 'one_cycle_factory']


def lr_lambda(k, total_iters, warmup_frac=0.05, div_factor=25.0):
    """Multiplier of the peak lr: peak/div at k = 0, linear up to 1 at floor(warmup_frac * total), linear down to peak/div."""
    floor = 1.0 / div_factor
    peak_iter = int(math.floor(warmup_frac * total_iters))
    if k < peak_iter:
        return floor + (1.0 - floor) * k / peak_iter
    decay_iters = total_iters - peak_iter
    if decay_iters <= 0:
        return 1.0
    return max(floor, 1.0 - (1.0 - floor) * (k - peak_iter) / decay_iters)


def one_cycle_factory(total_iters, warmup_frac=0.05, div_factor=25.0):
    last_epoch = -1
    _lr_lambda = functools.partial(lr_lambda, total_iters=total_iters, warmup_frac=warmup_frac,
                                   div_factor=div_factor)
    return lambda optimizer: LambdaLR(optimizer, _lr_lambda, last_epoch)
