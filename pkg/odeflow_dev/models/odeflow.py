import logging
import math

import hydra
import numpy as np
import pytorch_lightning as pl
import torch
from omegaconf import DictConfig

from ..training.optimizers import optimizer_step
from ..utils.errors import ConfigError, DivergenceError, EmptyMaskError, NonFiniteError
from ..utils.metrics import EndPointError, FlAll
from .config import REFINERS, ModelConfig
from .flownet import GRADIENT_MODES, FlowEstimator

__all__ = ['OdeFlowNet']


class OdeFlowNet(pl.LightningModule):
    def __init__(self, cfg: DictConfig):
        super().__init__()
        self.save_hyperparameters(cfg)
        self.automatic_optimization = False

        self.optimizer_factory = hydra.utils.instantiate(self.hparams.optimizer)
        self.scheduler_factory = hydra.utils.instantiate(self.hparams.scheduler)
        self.criterion = hydra.utils.instantiate(self.hparams.criterion)

        self.refiner = self.hparams.refiner
        if self.refiner not in REFINERS:
            raise ConfigError(f'Unknown refiner = "{self.refiner}"')
        self.gradient_mode = self.hparams.train.gradient_mode
        if self.gradient_mode not in GRADIENT_MODES:
            raise ConfigError(f'Unknown gradient_mode = "{self.gradient_mode}"')
        self.max_bad_losses = self.hparams.train.max_bad_losses

        self.model_config = ModelConfig.from_cfg(self.hparams.model, self.hparams.solver)
        self.net = FlowEstimator(self.model_config)

        self.val_epe = EndPointError()
        self.val_fl = FlAll()

        self.iterations_done = 0
        self.bad_losses = 0
        self.rejected_steps = 0
        self.last_loss = math.nan
        self.last_val_epe = math.nan
        self.solver_steps = []

    def forward(self, image1, image2, refiner=None, solver=None):
        return self.net(image1, image2, refiner=self.refiner if refiner is None else refiner, solver=solver,
                        gradient_mode=self.gradient_mode)

    def configure_optimizers(self):
        optimizer = self.optimizer_factory(self.net.parameters())
        if self.scheduler_factory is not None:
            scheduler = self.scheduler_factory(optimizer)
            return [optimizer], [scheduler]
        else:
            return optimizer

    def pop_solver_steps(self) -> float:
        steps = self.solver_steps
        self.solver_steps = []
        return float(np.mean(steps)) if steps else 0.0

    def training_step(self, batch, batch_idx):
        optimizer = self.optimizers()
        scheduler = self.lr_schedulers()
        image1, image2, flow_gt, valid = batch
        self.iterations_done += 1

        # blown-up parameters surface as non-finite activations before any loss exists
        try:
            prediction = self(image1, image2)
            loss = self.criterion(prediction.predictions, flow_gt, valid)
        except NonFiniteError as e:
            logging.warning(f'forward pass failed: {e}')
            loss = torch.tensor(math.nan)
        else:
            self.solver_steps.append(prediction.steps_taken)
        self.last_loss = float(loss.detach())

        if not math.isfinite(self.last_loss):
            self.bad_losses += 1
            logging.warning(f'non-finite loss at iteration {self.iterations_done} '
                            f'({self.bad_losses}/{self.max_bad_losses})')
            if self.bad_losses >= self.max_bad_losses:
                raise DivergenceError(f'loss non-finite for {self.bad_losses} consecutive iterations')
            optimizer.zero_grad()
        else:
            self.bad_losses = 0
            optimizer.zero_grad()
            self.manual_backward(loss)
            if not optimizer_step(optimizer):
                self.rejected_steps += 1
        if scheduler is not None:
            scheduler.step()
        self.log('train_loss', loss.detach(), prog_bar=True)
        return loss.detach()

    def step(self, batch, batch_idx, split):
        image1, image2, flow_gt, valid = batch
        try:
            prediction = self(image1, image2)
        except NonFiniteError as e:
            logging.warning(f'{split} batch {batch_idx} skipped: {e}')
            return None
        loss = self.criterion(prediction.predictions, flow_gt, valid)
        self.val_epe.update(prediction.flow, flow_gt, valid)
        self.val_fl.update(prediction.flow, flow_gt, valid)
        self.log(f'{split}_loss', loss)
        return loss

    def validation_step(self, batch, batch_idx):
        return self.step(batch, batch_idx, split='val')

    def test_step(self, batch, batch_idx):
        return self.step(batch, batch_idx, split='test')

    def epoch_end(self, split):
        try:
            epe = float(self.val_epe.compute())
            fl = float(self.val_fl.compute())
        except EmptyMaskError:
            epe = fl = math.nan
        self.log(f'{split}_epe', epe)
        self.log(f'{split}_fl_all', fl)
        self.val_epe.reset()
        self.val_fl.reset()
        return epe

    def on_validation_epoch_end(self):
        self.last_val_epe = self.epoch_end('val')

    def on_test_epoch_end(self):
        self.epoch_end('test')
