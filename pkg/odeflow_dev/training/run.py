import json
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import hydra
import numpy as np
import pandas as pd
import pytorch_lightning as pl
import torch
from omegaconf import DictConfig, OmegaConf
from torch.utils.data import DataLoader
from tqdm import tqdm

from ..models.flownet import FlowEstimator, upsample_flow
from ..ode.solvers import SolverConfig
from ..utils.metrics import EndPointError, FlAll, epe, fl_all
from ..visualization.flow import color_strip, flow_to_color
from .callbacks import JsonLinesLogger, ParamCheckpoint, write_model_checkpoint

__all__ = ['train', 'evaluate', 'ablate_time', 'infer']

PathLike = Union[str, Path]


def _stats(values) -> Dict[str, float]:
    if not values:
        return {'mean': 0.0, 'min': 0, 'max': 0}
    return {'mean': float(np.mean(values)), 'min': int(np.min(values)), 'max': int(np.max(values))}


def train(cfg: DictConfig, out_dir: PathLike) -> Dict:
    """Fit on generated pairs, write checkpoints / metrics.jsonl / eval_report.json under out_dir."""
    logging.info('Beginning training...')
    out_dir = Path(out_dir)
    pl.seed_everything(cfg.seed)

    iterations = cfg.train.iterations
    batch_size = cfg.train.batch_size
    datamodule = hydra.utils.instantiate(cfg.dataset, batch_size=batch_size, seed=cfg.seed,
                                         train_size=iterations * batch_size)
    model = hydra.utils.instantiate(cfg.model.target, cfg=cfg, _recursive_=False)
    logging.info(f'{model.net.num_parameters()} trainable parameters')

    checkpoint_dir = out_dir / 'checkpoints'
    metrics_path = out_dir / 'metrics.jsonl'
    if iterations == 0:
        logging.info('iterations=0, writing the initial checkpoint')
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        metrics_path.write_text('')
        write_model_checkpoint(model, checkpoint_dir / 'final.ckpt')
    else:
        callbacks = [JsonLinesLogger(metrics_path),
                     ParamCheckpoint(checkpoint_dir, every_n_iterations=cfg.train.checkpoint_interval)]
        trainer = pl.Trainer(accelerator='cpu', devices=1, max_epochs=1, logger=False, enable_checkpointing=False,
                             callbacks=callbacks, val_check_interval=min(cfg.train.log_interval, iterations),
                             num_sanity_val_steps=0, deterministic=cfg.deterministic,
                             enable_progress_bar=cfg.train.progress_bar, enable_model_summary=False,
                             default_root_dir=str(out_dir))
        trainer.fit(model=model, datamodule=datamodule)

    datamodule.setup(stage='test')
    report = evaluate(model.net, datamodule.test_dataloader(), refiner=model.refiner,
                      config=OmegaConf.to_container(cfg, resolve=True))
    (out_dir / 'eval_report.json').write_text(json.dumps(report, indent=2))
    logging.info(f'test epe={report["epe"]:.4f} fl_all={report["fl_all"]:.2f}%')
    return report


@torch.no_grad()
def evaluate(net: FlowEstimator, loader: DataLoader, refiner: str = 'ode', solver: Optional[SolverConfig] = None,
             config: Optional[Dict] = None) -> Dict:
    """EvalReport as a JSON-ready dict."""
    net.eval()
    epe_metric = EndPointError()
    fl_metric = FlAll()
    samples = []
    steps = []
    nfes = []
    for image1, image2, flow_gt, valid in tqdm(loader, desc=f'eval[{refiner}]', leave=False):
        prediction = net(image1, image2, refiner=refiner, solver=solver)
        epe_metric.update(prediction.flow, flow_gt, valid)
        fl_metric.update(prediction.flow, flow_gt, valid)
        steps.append(prediction.steps_taken)
        nfes.append(prediction.nfe)
        for b in range(flow_gt.shape[0]):
            if not bool(valid[b].any()):
                continue
            samples.append({
                'index': len(samples),
                'epe': float(epe(prediction.flow[b], flow_gt[b], valid[b])),
                'fl_all': float(fl_all(prediction.flow[b], flow_gt[b], valid[b])),
            })
    solver = net.config.solver if solver is None else solver
    return {
        'refiner': refiner,
        'epe': float(epe_metric.compute()),
        'fl_all': float(fl_metric.compute()),
        'num_samples': len(samples),
        'num_parameters': net.num_parameters(),
        'solver': {'method': solver.method, 'steps': _stats(steps), 'nfe': _stats(nfes)},
        'samples': samples,
        'config': config or {},
    }


@torch.no_grad()
def ablate_time(net: FlowEstimator, loader: DataLoader, times: Sequence[float],
                solver: Optional[SolverConfig] = None) -> Tuple[pd.DataFrame, torch.Tensor]:
    """EPE of the latent decoded at each t (solved from 0), plus a colour strip of the first sample."""
    net.eval()
    n = net.config.downsample
    epe_metrics = [EndPointError() for _ in times]
    fl_metrics = [FlAll() for _ in times]
    steps = [[] for _ in times]
    strip = None
    for image1, image2, flow_gt, valid in tqdm(loader, desc='ablate-t', leave=False):
        ctx = net.prepare(image1, image2)
        flows, trajectories = net.decode_at(ctx, times, solver=solver)
        upsampled = [upsample_flow(f, n) for f in flows]
        for i, (flow, trajectory) in enumerate(zip(upsampled, trajectories)):
            epe_metrics[i].update(flow, flow_gt, valid)
            fl_metrics[i].update(flow, flow_gt, valid)
            steps[i].append(trajectory.steps_taken)
        if strip is None:
            max_norm = float(flow_gt[0].pow(2).sum(dim=0).sqrt().max())
            images = [flow_to_color(f[0], max_norm) for f in upsampled]
            strip = color_strip(images + [flow_to_color(flow_gt[0], max_norm)])
    table = pd.DataFrame({
        't': [float(t) for t in times],
        'epe': [float(m.compute()) for m in epe_metrics],
        'fl_all': [float(m.compute()) for m in fl_metrics],
        'solver_steps_mean': [float(np.mean(s)) for s in steps],
    })
    return table, strip


@torch.no_grad()
def infer(net: FlowEstimator, image1: torch.Tensor, image2: torch.Tensor, refiner: str = 'ode',
          solver: Optional[SolverConfig] = None) -> torch.Tensor:
    """Flow of a single 3 x H x W pair as 2 x H x W."""
    net.eval()
    prediction = net(image1[None], image2[None], refiner=refiner, solver=solver)
    return prediction.flow[0]
