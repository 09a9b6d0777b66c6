import json
from pathlib import Path
from typing import Dict, Optional, Union

import pandas as pd
from omegaconf import OmegaConf

from .checkpoint import load_model
from .errors import ConfigError


class Experiment():
    """Read-only view of a training output directory (or of a single checkpoint file)."""

    def __init__(self, path: Union[str, Path], model_overrides: Optional[Dict] = None, solver=None):
        path = Path(path)
        if path.is_dir():
            self.outputs_dir = path
            self.checkpoint_dir = path / 'checkpoints'
            self.checkpoint_path = None
        elif path.is_file():
            self.outputs_dir = path.parent
            self.checkpoint_dir = path.parent
            self.checkpoint_path = path
        else:
            raise ConfigError(f'checkpoint not found: {path}')
        self.model_overrides = model_overrides
        self.solver = solver

        self._model = None
        self._checkpoint_config = None

        self.load()

    def find_checkpoint(self) -> Path:
        final = self.checkpoint_dir / 'final.ckpt'
        if final.is_file():
            return final
        ckpt_paths = [p for p in sorted(self.checkpoint_dir.glob('*.ckpt'))]
        if not ckpt_paths:
            raise ConfigError(f'no checkpoint in {self.checkpoint_dir}')
        return ckpt_paths[-1]

    def load(self):
        if self.checkpoint_path is None:
            self.checkpoint_path = self.find_checkpoint()
        self._model, self._checkpoint_config = load_model(self.checkpoint_path, self.model_overrides, self.solver)
        self._model.eval()

    @property
    def model(self):
        if self._model is not None:
            return self._model
        else:
            raise RuntimeError('model not loaded!')

    @property
    def refiner(self) -> str:
        return self._checkpoint_config.get('refiner', 'ode')

    @property
    def config(self):
        config_path = self.outputs_dir / 'config.yaml'
        return OmegaConf.load(config_path) if config_path.is_file() else None

    def metrics(self) -> pd.DataFrame:
        metrics_path = self.outputs_dir / 'metrics.jsonl'
        if not metrics_path.is_file() or metrics_path.stat().st_size == 0:
            return pd.DataFrame()
        return pd.read_json(metrics_path, lines=True)

    def report(self) -> Optional[Dict]:
        report_path = self.outputs_dir / 'eval_report.json'
        return json.loads(report_path.read_text()) if report_path.is_file() else None
