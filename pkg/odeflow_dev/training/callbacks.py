import json
import logging
from pathlib import Path
from typing import Union

import pytorch_lightning as pl

from ..utils.checkpoint import save_checkpoint

__all__ = ['JsonLinesLogger', 'ParamCheckpoint', 'write_model_checkpoint']


def write_model_checkpoint(pl_module, path: Union[str, Path]) -> None:
    config = {'model': pl_module.model_config.to_dict(), 'iteration': pl_module.iterations_done,
              'refiner': pl_module.refiner}
    save_checkpoint(path, pl_module.net.state_dict(), config)


class JsonLinesLogger(pl.Callback):
    """One metrics.jsonl record per validation pass."""

    def __init__(self, path: Union[str, Path]):
        super().__init__()
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text('')

    def on_validation_end(self, trainer, pl_module):
        optimizer = trainer.optimizers[0]
        record = {
            'iter': pl_module.iterations_done,
            'loss': pl_module.last_loss,
            'val_epe': pl_module.last_val_epe,
            'lr': optimizer.param_groups[0]['lr'],
            'solver_steps_mean': pl_module.pop_solver_steps(),
            'rejected_steps': pl_module.rejected_steps,
        }
        with open(self.path, 'a') as f:
            f.write(json.dumps(record) + '\n')
        logging.info(f'iter {record["iter"]}: loss={record["loss"]:.4f} val_epe={record["val_epe"]:.4f} '
                     f'lr={record["lr"]:.2e}')


class ParamCheckpoint(pl.Callback):
    def __init__(self, dirpath: Union[str, Path], every_n_iterations: int = 0):
        super().__init__()
        self.dirpath = Path(dirpath)
        self.dirpath.mkdir(parents=True, exist_ok=True)
        self.every_n_iterations = every_n_iterations

    def on_train_batch_end(self, trainer, pl_module, outputs, batch, batch_idx):
        k = pl_module.iterations_done
        if self.every_n_iterations > 0 and k % self.every_n_iterations == 0:
            write_model_checkpoint(pl_module, self.dirpath / f'iter_{k:06d}.ckpt')

    def on_train_end(self, trainer, pl_module):
        write_model_checkpoint(pl_module, self.dirpath / 'final.ckpt')
