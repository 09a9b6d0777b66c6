from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
import torch

__all__ = ['make_colorwheel', 'flow_to_color', 'color_strip', 'plot_epe_vs_time']

# Middlebury wheel segment lengths
RY, YG, GC, CB, BM, MR = 15, 6, 4, 11, 13, 6


def make_colorwheel() -> np.ndarray:
    """55 x 3 colours in [0, 1], red at index 0, rotating through yellow, green, cyan, blue, magenta."""
    ncols = RY + YG + GC + CB + BM + MR
    wheel = np.zeros((ncols, 3))
    col = 0
    wheel[col:col + RY, 0] = 1
    wheel[col:col + RY, 1] = np.arange(RY) / RY
    col += RY
    wheel[col:col + YG, 0] = 1 - np.arange(YG) / YG
    wheel[col:col + YG, 1] = 1
    col += YG
    wheel[col:col + GC, 1] = 1
    wheel[col:col + GC, 2] = np.arange(GC) / GC
    col += GC
    wheel[col:col + CB, 1] = 1 - np.arange(CB) / CB
    wheel[col:col + CB, 2] = 1
    col += CB
    wheel[col:col + BM, 2] = 1
    wheel[col:col + BM, 0] = np.arange(BM) / BM
    col += BM
    wheel[col:col + MR, 2] = 1 - np.arange(MR) / MR
    wheel[col:col + MR, 0] = 1
    return wheel


def flow_to_color(flow: torch.Tensor, max_norm: Optional[float] = None) -> torch.Tensor:
    """2 x H x W flow -> 3 x H x W colours, values k / 255.

    Hue follows atan2(dy, dx); saturation is |f| / max_norm (field maximum when absent).
    Vectors longer than max_norm are drawn darkened.
    """
    f = flow.detach().cpu().double().numpy()
    dx, dy = f[0], f[1]
    rad = np.sqrt(dx ** 2 + dy ** 2)
    if max_norm is None:
        max_norm = float(rad.max())
    if max_norm <= 0:
        max_norm = 1.0
    rad = rad / max_norm

    wheel = make_colorwheel()
    ncols = wheel.shape[0]
    angle = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    fk = angle / (2 * np.pi) * ncols
    k0 = np.floor(fk).astype(np.int64) % ncols
    k1 = (k0 + 1) % ncols
    frac = fk - np.floor(fk)

    image = np.empty((3,) + dx.shape)
    inside = rad <= 1
    for c in range(3):
        col = (1 - frac) * wheel[k0, c] + frac * wheel[k1, c]
        image[c] = np.where(inside, 1 - rad * (1 - col), col * 0.75)
    image = np.round(np.clip(image, 0, 1) * 255) / 255
    return torch.from_numpy(image.astype(np.float32))


def color_strip(images: Sequence[torch.Tensor], gap: int = 2) -> torch.Tensor:
    """Concatenate 3 x H x W images left to right with white gaps."""
    if not images:
        raise ValueError('color_strip needs at least one image')
    h = images[0].shape[1]
    spacer = torch.ones(3, h, gap, dtype=images[0].dtype)
    parts = []
    for i, image in enumerate(images):
        if i:
            parts.append(spacer)
        parts.append(image)
    return torch.cat(parts, dim=2)


def plot_epe_vs_time(table: pd.DataFrame, path: Union[str, Path]) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    fig.set_facecolor('white')
    ax.plot(table['t'].values, table['epe'].values, marker='o')
    ax.axvline(1.0, color='gray', linestyle='--', linewidth=1)
    ax.set_xlabel('t')
    ax.set_ylabel('EPE [px]')
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
