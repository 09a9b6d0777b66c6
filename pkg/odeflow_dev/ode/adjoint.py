from collections import OrderedDict
from typing import Dict, Optional, Sequence, Tuple

import torch

from ..modules.functional import ParamSet, flatten, gradients
from ..utils.errors import ShapeMismatch
from .solvers import OdeProblem, SolverConfig, Trajectory, _validate_times, odeint

__all__ = ['adjoint_backward', 'OdeintAdjointMethod', 'odeint_adjoint']


def adjoint_backward(problem: OdeProblem, config: SolverConfig, h1: torch.Tensor,
                     grad_output: torch.Tensor) -> Tuple[torch.Tensor, ParamSet]:
    """Gradients of a loss through h(t1) by a backward solve of the augmented system.

    The state [h, a, g] is integrated from t1 to t0 with dh/dt = f, da/dt = -a df/dh and
    dg/dt = -a df/dtheta. Only the flattened augmented state is kept between steps.
    Returns (dL/dh0, dL/dtheta) with one entry per name in problem.params.
    """
    if grad_output.shape != h1.shape:
        raise ShapeMismatch(f'grad_output {tuple(grad_output.shape)} does not match state {tuple(h1.shape)}')
    names = list(problem.params.keys())
    values = list(problem.params.values())
    shape = h1.shape
    numel = h1.numel()
    sizes = [v.numel() for v in values]

    def augmented_dynamics(t, y):
        h = y[:numel].view(shape)
        a = y[numel:2 * numel].view(shape)
        with torch.enable_grad():
            h = h.detach().requires_grad_(True)
            f = problem.dynamics(t, h)
            if f.shape != shape:
                raise ShapeMismatch(f'dynamics returned {tuple(f.shape)} for a state of {tuple(shape)}')
            # '' keys the state, never a parameter name
            wrt = OrderedDict([('', h)])
            wrt.update((name, v) for name, v in zip(names, values) if v.requires_grad)
            vjps = gradients(f, wrt, grad_outputs=-a)
        vjp_params = [vjps[name] if v.requires_grad else torch.zeros_like(v) for name, v in zip(names, values)]
        return flatten([f.detach(), vjps['']] + vjp_params)

    y1 = flatten([h1.detach(), grad_output] + [torch.zeros_like(v) for v in values])
    backward_problem = OdeProblem(augmented_dynamics, y1, t0=problem.t1, t1=problem.t0, params={})
    y0 = odeint(backward_problem, config.for_adjoint()).final

    grad_h0 = y0[numel:2 * numel].view(shape)
    grads = OrderedDict()
    offset = 2 * numel
    for name, v, size in zip(names, values, sizes):
        grads[name] = y0[offset:offset + size].view_as(v)
        offset += size
    return grad_h0, grads


class OdeintAdjointMethod(torch.autograd.Function):
    """Solve one segment [t0, t1] without recording a graph; gradients come from adjoint_backward."""

    @staticmethod
    def forward(ctx, dynamics, names, config, info, t0, t1, h0, *values):
        params = OrderedDict(zip(names, values))
        with torch.no_grad():
            trajectory = odeint(OdeProblem(dynamics, h0, t0, t1, params), config)
        info['steps_taken'] += trajectory.steps_taken
        info['nfe'] += trajectory.nfe
        info['rejected'] += trajectory.rejected
        h1 = trajectory.final
        ctx.dynamics = dynamics
        ctx.names = names
        ctx.config = config
        ctx.times = (t0, t1)
        ctx.values = values
        ctx.save_for_backward(h1)
        return h1

    @staticmethod
    def backward(ctx, grad_output):
        h1, = ctx.saved_tensors
        t0, t1 = ctx.times
        params = OrderedDict(zip(ctx.names, ctx.values))
        problem = OdeProblem(ctx.dynamics, h1, t0, t1, params)
        grad_h0, grads = adjoint_backward(problem, ctx.config, h1, grad_output)
        return (None, None, None, None, None, None, grad_h0, *grads.values())


def odeint_adjoint(problem: OdeProblem, config: SolverConfig,
                   eval_times: Optional[Sequence[float]] = None) -> Trajectory:
    """odeint whose backward pass is the adjoint solve, segment by segment between eval times."""
    times = _validate_times(problem, [problem.t0, problem.t1] if eval_times is None else eval_times)
    names = tuple(problem.params.keys())
    values = tuple(problem.params.values())
    info: Dict[str, int] = {'steps_taken': 0, 'nfe': 0, 'rejected': 0}

    states = []
    h = problem.h0
    t = problem.t0
    for te in times:
        if te != t:
            h = OdeintAdjointMethod.apply(problem.dynamics, names, config, info, t, te, h, *values)
            t = te
        states.append(h)
    return Trajectory(times=times, states=states, **info)
