import pytest
import torch

from odeflow_dev.models.config import ModelConfig
from odeflow_dev.ode.solvers import SolverConfig

TINY_MODEL = {
    'downsample': 4,
    'feature_dim': 8,
    'd_inp': 8,
    'd_hid': 8,
    'd_out': 8,
    'encoder_width': 8,
    'corr_levels': 2,
    'corr_radius': 1,
    'mixing_kernel': 3,
}


@pytest.fixture
def tiny_config():
    def make(**kwargs):
        values = dict(TINY_MODEL)
        values.update(kwargs)
        values.setdefault('solver', SolverConfig(method='midpoint', step_size=0.25))
        return ModelConfig(**values)
    return make


@pytest.fixture
def tiny_overrides():
    overrides = [f'model.{k}={v}' for k, v in TINY_MODEL.items()]
    return overrides + ['dataset=tiny', 'train=smoke', 'eval.batch_size=2']


@pytest.fixture
def image_pair():
    generator = torch.Generator().manual_seed(0)
    image1 = torch.rand(2, 3, 16, 16, generator=generator)
    image2 = torch.rand(2, 3, 16, 16, generator=generator)
    return image1, image2
