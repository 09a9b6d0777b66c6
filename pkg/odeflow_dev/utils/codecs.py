from pathlib import Path
from typing import Union

import numpy as np
import torch

from .errors import BadMagic, DimensionOverflow, MalformedHeader, NonFiniteError, ShapeMismatch, TruncatedFile

__all__ = ['FLO_MAGIC', 'write_flo', 'read_flo', 'write_ppm', 'read_ppm']

PathLike = Union[str, Path]

FLO_MAGIC = b'PIEH'
# refuse anything larger than 2^28 pixels
MAX_FLO_PIXELS = 1 << 28


def write_flo(flow: torch.Tensor, path: PathLike) -> None:
    """Middlebury .flo: magic, int32 width, int32 height, interleaved float32 (dx, dy), little-endian."""
    if flow.dim() != 3 or flow.shape[0] != 2:
        raise ShapeMismatch(f'expected a 2 x H x W flow, got {tuple(flow.shape)}')
    if not bool(torch.isfinite(flow).all()):
        raise NonFiniteError('refusing to write a non-finite flow')
    _, h, w = flow.shape
    if h * w > MAX_FLO_PIXELS:
        raise DimensionOverflow(f'flow of {w}x{h} is too large for .flo')
    data = flow.detach().cpu().permute(1, 2, 0).numpy().astype('<f4')
    with open(path, 'wb') as f:
        f.write(FLO_MAGIC)
        f.write(np.array([w, h], dtype='<i4').tobytes())
        f.write(data.tobytes())


def read_flo(path: PathLike) -> torch.Tensor:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != FLO_MAGIC:
        raise BadMagic(f'{path}: not a .flo file (magic {raw[:4]!r})')
    if len(raw) < 12:
        raise TruncatedFile(f'{path}: header is truncated')
    w, h = (int(v) for v in np.frombuffer(raw, dtype='<i4', count=2, offset=4))
    if w <= 0 or h <= 0 or w * h > MAX_FLO_PIXELS:
        raise DimensionOverflow(f'{path}: invalid extents {w}x{h}')
    count = 2 * w * h
    if len(raw) - 12 < 4 * count:
        raise TruncatedFile(f'{path}: expected {4 * count} payload bytes, found {len(raw) - 12}')
    data = np.frombuffer(raw, dtype='<f4', count=count, offset=12).reshape(h, w, 2)
    return torch.from_numpy(data.astype(np.float32)).permute(2, 0, 1).contiguous()


def write_ppm(image: torch.Tensor, path: PathLike) -> None:
    """Binary P6 with maxval 255; image is 3 x H x W in [0, 1]."""
    if image.dim() != 3 or image.shape[0] != 3:
        raise ShapeMismatch(f'expected a 3 x H x W image, got {tuple(image.shape)}')
    _, h, w = image.shape
    pixels = torch.round(image.detach().cpu().double().clamp(0, 1) * 255).to(torch.uint8)
    with open(path, 'wb') as f:
        f.write(f'P6\n{w} {h}\n255\n'.encode('ascii'))
        f.write(pixels.permute(1, 2, 0).contiguous().numpy().tobytes())


def _header_tokens(raw: bytes, path):
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b'#':
            while pos < len(raw) and raw[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace() and raw[pos:pos + 1] != b'#':
            pos += 1
        if start == pos:
            raise MalformedHeader(f'{path}: incomplete PPM header')
        tokens.append(raw[start:pos])
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise MalformedHeader(f'{path}: missing whitespace after the PPM header')
    return tokens, pos + 1


def read_ppm(path: PathLike) -> torch.Tensor:
    raw = Path(path).read_bytes()
    tokens, offset = _header_tokens(raw, path)
    if tokens[0] != b'P6':
        raise MalformedHeader(f'{path}: expected P6, got {tokens[0]!r}')
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeader(f'{path}: non-numeric PPM header {tokens[1:]!r}')
    if w <= 0 or h <= 0 or maxval != 255:
        raise MalformedHeader(f'{path}: unsupported PPM {w}x{h} maxval={maxval}')
    count = 3 * w * h
    if len(raw) - offset < count:
        raise TruncatedFile(f'{path}: expected {count} payload bytes, found {len(raw) - offset}')
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset).reshape(h, w, 3)
    return torch.from_numpy(pixels.astype(np.float32) / 255.0).permute(2, 0, 1).contiguous()
