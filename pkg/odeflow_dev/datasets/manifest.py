import json
import logging
from pathlib import Path
from typing import Dict, List, Union

from torch.utils.data import Dataset
from tqdm import tqdm

from ..utils.codecs import read_flo, read_ppm, write_flo, write_ppm
from ..utils.errors import ConfigError, ShapeMismatch
from .synthetic import SyntheticFlowDataset, valid_mask

__all__ = ['write_manifest', 'read_manifest', 'export_dataset', 'ManifestDataset']

PathLike = Union[str, Path]
MANIFEST_KEYS = ('image1', 'image2', 'flow', 'seed')


def write_manifest(entries: List[Dict], path: PathLike) -> None:
    Path(path).write_text(json.dumps(entries, indent=2))


def read_manifest(path: PathLike) -> List[Dict]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f'manifest not found: {path}')
    entries = json.loads(path.read_text())
    if not isinstance(entries, list):
        raise ConfigError(f'{path}: manifest must be a JSON list')
    root = path.parent
    resolved = []
    for i, entry in enumerate(entries):
        missing = [k for k in MANIFEST_KEYS if k not in entry]
        if missing:
            raise ConfigError(f'{path}: entry {i} lacks {missing}')
        resolved.append({
            'image1': root / entry['image1'],
            'image2': root / entry['image2'],
            'flow': root / entry['flow'],
            'seed': int(entry['seed']),
        })
    return resolved


def export_dataset(dataset: SyntheticFlowDataset, out_dir: PathLike) -> Path:
    """Write every pair as ppm / flo files plus manifest.json (paths relative to out_dir)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for index in tqdm(range(len(dataset)), desc='gen-data'):
        pair = dataset.pair(index)
        stem = f'{index:06d}'
        names = {'image1': f'{stem}_img1.ppm', 'image2': f'{stem}_img2.ppm', 'flow': f'{stem}_flow.flo'}
        write_ppm(pair.image1, out_dir / names['image1'])
        write_ppm(pair.image2, out_dir / names['image2'])
        write_flo(pair.flow, out_dir / names['flow'])
        entries.append({**names, 'seed': pair.seed})
    manifest = out_dir / 'manifest.json'
    write_manifest(entries, manifest)
    logging.info(f'Wrote {len(entries)} pairs to {out_dir}.')
    return manifest


class ManifestDataset(Dataset):
    def __init__(self, path: PathLike):
        self.path = Path(path)
        self.entries = read_manifest(self.path)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, index):
        entry = self.entries[index]
        image1 = read_ppm(entry['image1'])
        image2 = read_ppm(entry['image2'])
        flow = read_flo(entry['flow'])
        if image1.shape != image2.shape or image1.shape[1:] != flow.shape[1:]:
            raise ShapeMismatch(f'{self.path}: entry {index} has inconsistent extents')
        return image1, image2, flow, valid_mask(flow)
