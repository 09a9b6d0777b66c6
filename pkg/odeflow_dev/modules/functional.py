from collections import OrderedDict
from typing import Dict, Iterable, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..utils.errors import NonFiniteError, ShapeMismatch

__all__ = ['ParamSet', 'param_set', 'check_finite', 'conv2d', 'elementwise', 'bilinear_sample', 'coords_grid',
           'backward', 'gradients', 'flatten']

# named leaves with deterministic iteration order
ParamSet = Dict[str, torch.Tensor]

_ELEMENTWISE = {
    'relu': torch.relu,
    'sigmoid': torch.sigmoid,
    'tanh': torch.tanh,
}


def param_set(module: nn.Module, extra: Optional[Dict[str, torch.Tensor]] = None) -> ParamSet:
    params = OrderedDict((name, p) for name, p in module.named_parameters() if p.requires_grad)
    if extra is not None:
        for name, tensor in extra.items():
            if name in params:
                raise ShapeMismatch(f'duplicate parameter name "{name}"')
            params[name] = tensor
    return params


def check_finite(tensor: torch.Tensor, what: str = 'tensor') -> torch.Tensor:
    if not bool(torch.isfinite(tensor).all()):
        raise NonFiniteError(f'non-finite values in {what}')
    return tensor


def conv2d(inputs: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None, padding: int = 0,
           stride: int = 1) -> torch.Tensor:
    """Checked 2-D convolution.

    inputs: B x Cin x H x W, weight: Cout x Cin x k x k, bias: Cout.
    Output extents are floor((H + 2 * padding - k) / stride) + 1.
    """
    k = weight.shape[-1]
    if weight.dim() != 4 or weight.shape[-2] != k or k % 2 != 1:
        raise ShapeMismatch(f'expected an odd square kernel, got {tuple(weight.shape)}')
    if padding < 0 or stride < 1:
        raise ShapeMismatch(f'invalid padding={padding} / stride={stride}')
    if inputs.shape[1] != weight.shape[1]:
        raise ShapeMismatch(f'input has {inputs.shape[1]} channels but kernel expects {weight.shape[1]}')
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeMismatch(f'bias shape {tuple(bias.shape)} does not match {weight.shape[0]} output channels')
    out = F.conv2d(inputs, weight, bias, stride=stride, padding=padding)
    return check_finite(out, 'conv2d output')


def elementwise(inputs: torch.Tensor, fn: str) -> torch.Tensor:
    if fn not in _ELEMENTWISE:
        raise ValueError(f'Unknown elementwise fn = "{fn}"')
    return _ELEMENTWISE[fn](inputs)


def coords_grid(batch: int, height: int, width: int, dtype=torch.float32, device=None) -> torch.Tensor:
    """Pixel coordinates as B x 2 x H x W with channel 0 = x, channel 1 = y."""
    ys, xs = torch.meshgrid(torch.arange(height, dtype=dtype, device=device),
                            torch.arange(width, dtype=dtype, device=device), indexing='ij')
    grid = torch.stack([xs, ys], dim=0)
    return grid[None].expand(batch, -1, -1, -1)


def bilinear_sample(image: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
    """Sample image (B x C x H x W) at pixel coordinates (B x H' x W' x 2, (x, y) order).

    Coordinates outside the image are clamped to the border, which matches
    F.grid_sample(padding_mode="border", align_corners=True). Indexing is done on pixel
    coordinates directly so identity and integer-shift coordinates reproduce pixels exactly.
    Returns B x C x H' x W'.
    """
    b, c, h, w = image.shape
    if coords.shape[0] != b or coords.shape[-1] != 2:
        raise ShapeMismatch(f'coords {tuple(coords.shape)} do not match image {tuple(image.shape)}')
    out_h, out_w = coords.shape[1], coords.shape[2]

    x = coords[..., 0].clamp(0, w - 1)
    y = coords[..., 1].clamp(0, h - 1)
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    wx = x - x0
    wy = y - y0
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = image.reshape(b, c, h * w)

    def gather(yi, xi):
        index = (yi * w + xi).reshape(b, 1, out_h * out_w).expand(-1, c, -1)
        return flat.gather(2, index).reshape(b, c, out_h, out_w)

    wx = wx[:, None]
    wy = wy[:, None]
    top = gather(y0, x0) * (1 - wx) + gather(y0, x1) * wx
    bottom = gather(y1, x0) * (1 - wx) + gather(y1, x1) * wx
    return top * (1 - wy) + bottom * wy


def backward(loss: torch.Tensor, params: Optional[ParamSet] = None) -> ParamSet:
    """Reverse pass from a scalar loss.

    Populates .grad on every reachable leaf and returns the gradients of params
    (zeros for parameters the loss does not depend on).
    """
    if loss.numel() != 1:
        raise ShapeMismatch(f'backward needs a scalar loss, got shape {tuple(loss.shape)}')
    loss.backward()
    grads = OrderedDict()
    if params is None:
        return grads
    for name, p in params.items():
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        check_finite(g, f'gradient of {name}')
        grads[name] = g
    return grads


def gradients(outputs: torch.Tensor, params: ParamSet, grad_outputs: Optional[torch.Tensor] = None,
              create_graph: bool = False) -> ParamSet:
    values = list(params.values())
    grads = torch.autograd.grad(outputs, values, grad_outputs=grad_outputs, allow_unused=True,
                                create_graph=create_graph)
    return OrderedDict((name, torch.zeros_like(p) if g is None else g)
                       for (name, p), g in zip(params.items(), grads))


def flatten(tensors: Iterable[torch.Tensor]) -> torch.Tensor:
    return torch.cat([t.reshape(-1) for t in tensors])
