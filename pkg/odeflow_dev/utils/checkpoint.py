import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch

from .errors import BadMagic, CheckpointMismatch, TruncatedFile

__all__ = ['CHECKPOINT_MAGIC', 'CHECKPOINT_VERSION', 'save_checkpoint', 'load_checkpoint', 'load_model']

PathLike = Union[str, Path]

CHECKPOINT_MAGIC = b'ODEFLOW\x00'
CHECKPOINT_VERSION = 1

# layout (little-endian):
#   magic[8] | u32 version | u32 len | config json
#   u32 count | count x (u32 len | name utf-8 | u32 ndim | u32 dims[ndim] | f32 values)


def _u32(*values: int) -> bytes:
    return np.array(values, dtype='<u4').tobytes()


def save_checkpoint(path: PathLike, tensors: Dict[str, torch.Tensor], config: Dict[str, Any]) -> None:
    blob = json.dumps(config, sort_keys=True).encode('utf-8')
    chunks = [CHECKPOINT_MAGIC, _u32(CHECKPOINT_VERSION, len(blob)), blob, _u32(len(tensors))]
    for name, tensor in tensors.items():
        encoded = name.encode('utf-8')
        values = tensor.detach().cpu().contiguous().numpy().astype('<f4')
        chunks.append(_u32(len(encoded)))
        chunks.append(encoded)
        chunks.append(_u32(tensor.dim(), *tensor.shape))
        chunks.append(values.tobytes())
    Path(path).write_bytes(b''.join(chunks))
    logging.debug(f'wrote {len(tensors)} tensors to {path}')


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.path = path
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.raw):
            raise TruncatedFile(f'{self.path}: checkpoint ends at byte {len(self.raw)}, needed {self.pos + size}')
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def u32(self, count: int = 1):
        values = np.frombuffer(self.take(4 * count), dtype='<u4')
        return [int(v) for v in values]


def load_checkpoint(path: PathLike) -> Tuple[Dict[str, Any], 'OrderedDict[str, torch.Tensor]']:
    reader = _Reader(Path(path).read_bytes(), path)
    magic = reader.take(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise BadMagic(f'{path}: not a checkpoint (magic {magic!r})')
    version, blob_len = reader.u32(2)
    if version != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f'{path}: unsupported checkpoint version {version}')
    config = json.loads(reader.take(blob_len).decode('utf-8'))
    count, = reader.u32()
    tensors = OrderedDict()
    for _ in range(count):
        name_len, = reader.u32()
        name = reader.take(name_len).decode('utf-8')
        ndim, = reader.u32()
        shape = reader.u32(ndim) if ndim else []
        numel = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * numel), dtype='<f4').reshape(shape)
        tensors[name] = torch.from_numpy(values.astype(np.float32))
    return config, tensors


def load_model(path: PathLike, model_overrides: Optional[Dict[str, Any]] = None, solver=None):
    """Rebuild a FlowEstimator from a checkpoint.

    model_overrides are model keys the caller asked for explicitly; each must agree with the stored value.
    solver, when given, replaces the stored solver settings.
    """
    from ..models.config import ModelConfig
    from ..models.flownet import FlowEstimator

    config, tensors = load_checkpoint(path)
    if 'model' not in config:
        raise CheckpointMismatch(f'{path}: checkpoint has no model config')
    stored = ModelConfig.from_dict(config['model'])
    current = stored.to_dict()
    for key, value in (model_overrides or {}).items():
        if key not in current:
            raise CheckpointMismatch(f'{path}: unknown model key "{key}"')
        if current[key] != value:
            raise CheckpointMismatch(f'{path}: checkpoint has model.{key}={current[key]!r}, requested {value!r}')
    if solver is not None:
        stored.solver = solver
    model = FlowEstimator(stored)
    expected = model.state_dict()
    missing = set(expected) - set(tensors)
    unexpected = set(tensors) - set(expected)
    if missing or unexpected:
        raise CheckpointMismatch(f'{path}: missing {sorted(missing)}, unexpected {sorted(unexpected)}')
    for name, tensor in tensors.items():
        if tuple(tensor.shape) != tuple(expected[name].shape):
            raise CheckpointMismatch(f'{path}: {name} has shape {tuple(tensor.shape)}, '
                                     f'expected {tuple(expected[name].shape)}')
    model.load_state_dict(tensors)
    return model, config
