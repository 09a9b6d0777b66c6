import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..modules.correlation import CorrelationPyramid, build_correlation, global_match, lookup_pyramid
from ..modules.layers import ConvGRUCell, FeatureEncoder, FlowHead, MixingNetwork
from ..modules.rhs import GruOdeRHS, TransformerRHS
from ..ode.adjoint import odeint_adjoint
from ..ode.solvers import OdeProblem, SolverConfig, Trajectory, odeint
from ..utils.errors import ConfigError, ShapeMismatch
from .config import REFINERS, ModelConfig

__all__ = ['FlowPrediction', 'FlowContext', 'FlowEstimator', 'upsample_flow', 'GRADIENT_MODES']

GRADIENT_MODES = ('direct', 'adjoint')


def upsample_flow(flow: torch.Tensor, factor: int) -> torch.Tensor:
    """Bilinear x factor upsampling; displacements are rescaled to full-resolution pixels."""
    if factor == 1:
        return flow
    return factor * F.interpolate(flow, scale_factor=factor, mode='bilinear', align_corners=True)


@dataclass
class FlowContext:
    """Everything computed from the image pair before refinement (latent resolution)."""
    corr: torch.Tensor
    pyramid: CorrelationPyramid
    context: torch.Tensor
    flow_init: torch.Tensor


@dataclass
class FlowPrediction:
    flow: torch.Tensor
    predictions: List[torch.Tensor]
    flow_init: torch.Tensor
    latent_flow: torch.Tensor
    steps_taken: int = 0
    nfe: int = 0
    rejected: int = 0


class FlowEstimator(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        n = config.downsample
        self.fnet = FeatureEncoder(config.feature_dim, downsample=n, width=config.encoder_width)
        self.cnet = FeatureEncoder(config.d_inp, downsample=n, width=config.encoder_width)
        self.mixing = MixingNetwork(config.d_inp, config.d_hid, config.corr_channels, depth=config.mixing_depth,
                                    ks=config.mixing_kernel)
        self.gru = ConvGRUCell(config.d_hid, config.d_hid)
        if config.rhs_kind == 'transformer':
            self.rhs = TransformerRHS(config.d_hid, zero_init=config.rhs_zero_init)
        self.decoder = FlowHead(config.d_hid, zero_init=config.decoder_zero_init)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)

    def encode_features(self, image: torch.Tensor) -> torch.Tensor:
        return self.fnet(image)

    def prepare(self, image1: torch.Tensor, image2: torch.Tensor) -> FlowContext:
        if image1.shape != image2.shape:
            raise ShapeMismatch(f'image extents differ: {tuple(image1.shape)} vs {tuple(image2.shape)}')
        g1 = self.encode_features(image1)
        g2 = self.encode_features(image2)
        corr = build_correlation(g1, g2)
        pyramid = CorrelationPyramid(corr, num_levels=self.config.corr_levels)
        context = self.cnet(image1)
        flow_init = global_match(corr, temperature=self.config.match_temperature)
        return FlowContext(corr=corr, pyramid=pyramid, context=context, flow_init=flow_init)

    def mix(self, ctx: FlowContext, flow: torch.Tensor) -> torch.Tensor:
        corr_feat = lookup_pyramid(ctx.pyramid, flow, self.config.corr_radius)
        return self.mixing(ctx.context, flow, corr_feat)

    def dynamics(self, h0: torch.Tensor):
        """The ODE right-hand side and the tensors it depends on."""
        if self.config.rhs_kind == 'transformer':
            return self.rhs, self.rhs.ode_params()
        rhs = GruOdeRHS(self.gru, inputs=h0)
        return rhs, rhs.ode_params()

    def solve(self, h0: torch.Tensor, t1: float = 1.0, solver: Optional[SolverConfig] = None,
              gradient_mode: str = 'direct', eval_times: Optional[Sequence[float]] = None) -> Trajectory:
        if gradient_mode not in GRADIENT_MODES:
            raise ConfigError(f'Unknown gradient_mode = "{gradient_mode}"')
        solver = self.config.solver if solver is None else solver
        rhs, params = self.dynamics(h0)
        problem = OdeProblem(rhs, h0, 0.0, t1, params)
        if gradient_mode == 'adjoint' and torch.is_grad_enabled():
            return odeint_adjoint(problem, solver, eval_times)
        return odeint(problem, solver, eval_times)

    def ode_refine(self, ctx: FlowContext, flow: torch.Tensor, solver: Optional[SolverConfig] = None,
                   gradient_mode: str = 'direct'):
        h0 = self.mix(ctx, flow)
        trajectory = self.solve(h0, 1.0, solver=solver, gradient_mode=gradient_mode)
        return flow + self.decoder(trajectory.final), trajectory

    def decode_at(self, ctx: FlowContext, times: Sequence[float], solver: Optional[SolverConfig] = None):
        """Latent flows decoded at each time, each solved separately from t = 0."""
        flow = ctx.flow_init
        h0 = self.mix(ctx, flow)
        flows = []
        trajectories = []
        for t in times:
            if t == 0:
                h = h0
                trajectories.append(Trajectory(times=[0.0], states=[h0]))
            else:
                trajectory = self.solve(h0, float(t), solver=solver)
                trajectories.append(trajectory)
                h = trajectory.final
            flows.append(flow + self.decoder(h))
        return flows, trajectories

    def gru_refine(self, ctx: FlowContext, flow: torch.Tensor, iterations: Optional[int] = None,
                   return_hidden: bool = False):
        iterations = self.config.gru_iterations if iterations is None else iterations
        if iterations < 1:
            raise ValueError(f'iterations must be >= 1, got {iterations}')
        # the first input equals the initial hidden state
        h = x = self.mix(ctx, flow)
        flows = []
        hidden = []
        for k in range(iterations):
            if k > 0:
                x = self.mix(ctx, flow)
            h = self.gru(h, x)
            flow = flow + self.decoder(h)
            flows.append(flow)
            hidden.append(h)
        if return_hidden:
            return flows, hidden
        return flows

    def forward(self, image1: torch.Tensor, image2: torch.Tensor, refiner: str = 'ode',
                solver: Optional[SolverConfig] = None, gradient_mode: str = 'direct') -> FlowPrediction:
        if refiner not in REFINERS:
            raise ConfigError(f'Unknown refiner = "{refiner}"')
        n = self.config.downsample
        ctx = self.prepare(image1, image2)
        steps_taken = nfe = rejected = 0
        if refiner == 'none':
            latent = [ctx.flow_init]
        elif refiner == 'gru':
            latent = self.gru_refine(ctx, ctx.flow_init)
        else:
            flow, trajectory = self.ode_refine(ctx, ctx.flow_init, solver=solver, gradient_mode=gradient_mode)
            latent = [flow]
            steps_taken, nfe, rejected = trajectory.steps_taken, trajectory.nfe, trajectory.rejected
            logging.debug(f'ode refine: {steps_taken} steps, {nfe} evaluations, {rejected} rejected')
        predictions = [upsample_flow(f, n) for f in latent]
        return FlowPrediction(flow=predictions[-1], predictions=predictions,
                              flow_init=upsample_flow(ctx.flow_init, n), latent_flow=latent[-1],
                              steps_taken=steps_taken, nfe=nfe, rejected=rejected)
