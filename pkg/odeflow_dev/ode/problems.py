import math
from dataclasses import dataclass
from typing import Callable, Dict, List

import numpy as np
import torch

from ..utils.errors import ConfigError
from .solvers import OdeProblem, SolverConfig, odeint

__all__ = ['AnalyticProblem', 'ANALYTIC_PROBLEMS', 'get_problem', 'convergence_order']

_ROTATION = torch.tensor([[0.0, -1.0], [1.0, 0.0]], dtype=torch.float64)


@dataclass
class AnalyticProblem:
    name: str
    dynamics: Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
    solution: Callable[[float], torch.Tensor]
    t0: float = 0.0
    t1: float = 1.0

    def problem(self, t0: float = None, t1: float = None) -> OdeProblem:
        t0 = self.t0 if t0 is None else t0
        t1 = self.t1 if t1 is None else t1
        return OdeProblem(self.dynamics, self.solution(t0), t0, t1, params={})

    def error(self, state: torch.Tensor, t: float) -> float:
        return float((state - self.solution(t)).abs().max())


def _scalar(value: float) -> torch.Tensor:
    return torch.tensor([value], dtype=torch.float64)


ANALYTIC_PROBLEMS: Dict[str, AnalyticProblem] = {
    'exp_growth': AnalyticProblem(
        name='exp_growth',
        dynamics=lambda t, y: y,
        solution=lambda t: _scalar(math.exp(t))),
    'cos_growth': AnalyticProblem(
        name='cos_growth',
        dynamics=lambda t, y: torch.cos(t) * y,
        solution=lambda t: _scalar(math.exp(math.sin(t)))),
    'rotation': AnalyticProblem(
        name='rotation',
        dynamics=lambda t, y: _ROTATION.to(y.dtype) @ y,
        solution=lambda t: torch.tensor([math.cos(t), math.sin(t)], dtype=torch.float64),
        t1=2.0),
    'linear_decay': AnalyticProblem(
        name='linear_decay',
        dynamics=lambda t, y: -2.0 * y,
        solution=lambda t: _scalar(math.exp(-2.0 * t))),
}


def get_problem(name: str) -> AnalyticProblem:
    if name not in ANALYTIC_PROBLEMS:
        raise ConfigError(f'Unknown problem = "{name}", expected one of {sorted(ANALYTIC_PROBLEMS)}')
    return ANALYTIC_PROBLEMS[name]


def convergence_order(method: str, problem: AnalyticProblem, step_size: float, levels: int = 4) -> float:
    """Mean of log2(err(h) / err(h / 2)) over the ladder h, h/2, ..., h/2^(levels-1)."""
    errors: List[float] = []
    for level in range(levels):
        step = step_size / 2 ** level
        num_steps = int(math.ceil(abs(problem.t1 - problem.t0) / step))
        config = SolverConfig(method=method, step_size=step, max_steps=max(num_steps, 1000))
        trajectory = odeint(problem.problem(), config)
        errors.append(problem.error(trajectory.final, problem.t1))
    errors = np.asarray(errors)
    return float(np.mean(np.log2(errors[:-1] / errors[1:])))
