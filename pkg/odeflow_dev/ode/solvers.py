import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import torch

from ..modules.functional import ParamSet, param_set
from ..utils.errors import ConfigError, MaxStepsExceeded, NonFiniteState

__all__ = ['SolverConfig', 'OdeProblem', 'Trajectory', 'odeint', 'FIXED_METHODS', 'ADAPTIVE_METHODS']

FIXED_METHODS = ('euler', 'midpoint', 'rk4')
ADAPTIVE_METHODS = ('fehlberg',)


@dataclass
class SolverConfig:
    method: str = 'midpoint'
    step_size: float = 0.25
    rtol: float = 1e-3
    atol: float = 1e-3
    max_steps: int = 1000
    adjoint_rtol: Optional[float] = None
    adjoint_atol: Optional[float] = None

    def __post_init__(self):
        if self.method not in FIXED_METHODS + ADAPTIVE_METHODS:
            raise ConfigError(f'Unknown solver method = "{self.method}"')
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError(f'tolerances must be positive, got rtol={self.rtol}, atol={self.atol}')
        if self.method in FIXED_METHODS and not self.step_size > 0:
            raise ConfigError(f'step_size must be positive, got {self.step_size}')
        if self.max_steps < 1:
            raise ConfigError(f'max_steps must be >= 1, got {self.max_steps}')

    @property
    def adaptive(self) -> bool:
        return self.method in ADAPTIVE_METHODS

    def for_adjoint(self) -> 'SolverConfig':
        return SolverConfig(method=self.method, step_size=self.step_size,
                            rtol=self.adjoint_rtol if self.adjoint_rtol is not None else self.rtol,
                            atol=self.adjoint_atol if self.adjoint_atol is not None else self.atol,
                            max_steps=self.max_steps)

    @classmethod
    def from_cfg(cls, cfg) -> 'SolverConfig':
        return cls(method=cfg.method, step_size=float(cfg.step_size), rtol=float(cfg.rtol), atol=float(cfg.atol),
                   max_steps=int(cfg.max_steps),
                   adjoint_rtol=None if cfg.get('adjoint_rtol') is None else float(cfg.adjoint_rtol),
                   adjoint_atol=None if cfg.get('adjoint_atol') is None else float(cfg.adjoint_atol))


@dataclass
class OdeProblem:
    """dh/dt = dynamics(t, h) on [t0, t1] (either order) starting from h0.

    params are the tensors the dynamics depend on (defaults to the module's parameters).
    """
    dynamics: Callable[[torch.Tensor, torch.Tensor], torch.Tensor]
    h0: torch.Tensor
    t0: float = 0.0
    t1: float = 1.0
    params: Optional[ParamSet] = None

    def __post_init__(self):
        if self.params is None:
            self.params = param_set(self.dynamics) if isinstance(self.dynamics, torch.nn.Module) else {}

    @property
    def direction(self) -> float:
        return 1.0 if self.t1 >= self.t0 else -1.0


@dataclass
class Trajectory:
    times: List[float]
    states: List[torch.Tensor]
    steps_taken: int = 0
    nfe: int = 0
    rejected: int = 0

    @property
    def final(self) -> torch.Tensor:
        return self.states[-1]

    def summary(self) -> Dict:
        return {
            'times': list(self.times),
            'state_norms': [float(s.detach().norm()) for s in self.states],
            'steps_taken': self.steps_taken,
            'nfe': self.nfe,
            'rejected': self.rejected,
        }


class _Counted:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, t, h):
        self.calls += 1
        return self.fn(t, h)


def _euler_step(func, t, dt, h):
    return h + dt * func(t, h)


def _midpoint_step(func, t, dt, h):
    k1 = func(t, h)
    return h + dt * func(t + 0.5 * dt, h + 0.5 * dt * k1)


def _rk4_step(func, t, dt, h):
    k1 = func(t, h)
    k2 = func(t + 0.5 * dt, h + 0.5 * dt * k1)
    k3 = func(t + 0.5 * dt, h + 0.5 * dt * k2)
    k4 = func(t + dt, h + dt * k3)
    return h + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6


_FIXED_STEPS = {
    'euler': _euler_step,
    'midpoint': _midpoint_step,
    'rk4': _rk4_step,
}

# classic RKF45 tableau, 4th order propagated, 5th order for the error estimate
_FEHLBERG_C = (0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2)
_FEHLBERG_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_FEHLBERG_B4 = (25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0)
_FEHLBERG_ERR = (1 / 360, 0.0, -128 / 4275, -2197 / 75240, 1 / 50, 2 / 55)


def _fehlberg_step(func, t, dt, h):
    k = []
    for c, row in zip(_FEHLBERG_C, _FEHLBERG_A):
        hi = h
        for a, kj in zip(row, k):
            if a != 0.0:
                hi = hi + dt * a * kj
        k.append(func(t + c * dt, hi))
    h_next = h
    error = torch.zeros_like(h)
    for b, e, ki in zip(_FEHLBERG_B4, _FEHLBERG_ERR, k):
        if b != 0.0:
            h_next = h_next + dt * b * ki
        if e != 0.0:
            error = error + dt * e * ki
    return h_next, error


def _rms(x: torch.Tensor) -> float:
    return float(x.detach().pow(2).mean().sqrt())


def _check_state(h: torch.Tensor, t: float):
    if not bool(torch.isfinite(h).all()):
        raise NonFiniteState(f'non-finite ODE state at t={t:.6g}')


def _as_time(t: float, like: torch.Tensor) -> torch.Tensor:
    return torch.tensor(t, dtype=like.dtype, device=like.device)


def _validate_times(problem: OdeProblem, eval_times: Sequence[float]) -> List[float]:
    times = [float(t) for t in eval_times]
    lo, hi = min(problem.t0, problem.t1), max(problem.t0, problem.t1)
    span = max(abs(problem.t1 - problem.t0), 1.0)
    for t in times:
        if t < lo - 1e-12 * span or t > hi + 1e-12 * span:
            raise ValueError(f'eval time {t} outside [{problem.t0}, {problem.t1}]')
    d = problem.direction
    for a, b in zip(times[:-1], times[1:]):
        if d * (b - a) < 0:
            raise ValueError(f'eval times must be sorted in the integration direction, got {times}')
    return times


def _odeint_fixed(func, problem: OdeProblem, config: SolverConfig, times: List[float]) -> Trajectory:
    span = problem.t1 - problem.t0
    num_steps = max(int(math.ceil(abs(span) / config.step_size - 1e-9)), 1) if span != 0 else 0
    if num_steps > config.max_steps:
        raise MaxStepsExceeded(f'{config.method} needs {num_steps} steps > max_steps={config.max_steps}')
    step = _FIXED_STEPS[config.method]
    dt = span / num_steps if num_steps else 0.0

    # only the current and previous grid states are kept alive
    h = prev = problem.h0
    i = 0
    states = []
    for te in times:
        pos = (te - problem.t0) / dt if num_steps else 0.0
        k = int(round(pos))
        aligned = abs(pos - k) < 1e-9
        target = min(max(k if aligned else int(math.floor(pos)) + 1, 0), num_steps)
        while i < target:
            t = problem.t0 + i * dt
            prev = h
            h = step(func, _as_time(t, h), dt, h)
            i += 1
            _check_state(h, t + dt)
        if aligned:
            states.append(h)
        else:
            states.append(prev + (pos - (i - 1)) * (h - prev))
    return Trajectory(times=times, states=states, steps_taken=i)


def _fehlberg_segment(func, t0: float, t1: float, h: torch.Tensor, config: SolverConfig,
                      budget: int) -> Tuple[torch.Tensor, int, int]:
    """Integrate [t0, t1] on the coarsest grid (t1 - t0) / 2^k whose every step passes the error test.

    A step passes when the RMS of err / (atol + rtol * max(|h|, |h_next|)) is <= 1. The states on a given
    grid do not depend on the tolerances, so tighter tolerances only ever select the same or a finer grid.
    Returns (state, steps taken, steps rejected).
    """
    num_steps = 1
    rejected = 0
    finite = True
    while num_steps <= budget:
        dt = (t1 - t0) / num_steps
        state = h
        for i in range(num_steps):
            t = t0 + i * dt
            h_next, error = _fehlberg_step(func, _as_time(t, state), dt, state)
            tol = config.atol + config.rtol * torch.max(state.detach().abs(), h_next.detach().abs())
            ratio = _rms(error / tol)
            if not ratio <= 1.0:
                finite = math.isfinite(ratio)
                rejected += i + 1
                break
            state = h_next
        else:
            _check_state(state, t1)
            return state, num_steps, rejected
        num_steps *= 2
    if not finite:
        raise NonFiniteState(f'fehlberg error estimate is non-finite on [{t0:.6g}, {t1:.6g}]')
    raise MaxStepsExceeded(f'fehlberg needs more than {budget} steps on [{t0:.6g}, {t1:.6g}] '
                           f'(max_steps={config.max_steps})')


def _odeint_fehlberg(func, problem: OdeProblem, config: SolverConfig, times: List[float]) -> Trajectory:
    h = problem.h0
    t = problem.t0
    states = []
    steps = rejected = 0
    for te in times:
        if te != t:
            h, taken, dropped = _fehlberg_segment(func, t, te, h, config, config.max_steps - steps)
            steps += taken
            rejected += dropped
            t = te
        states.append(h)
    return Trajectory(times=times, states=states, steps_taken=steps, rejected=rejected)


def odeint(problem: OdeProblem, config: SolverConfig, eval_times: Optional[Sequence[float]] = None) -> Trajectory:
    """Integrate problem from t0 to t1 and return the states at eval_times (default [t0, t1])."""
    times = _validate_times(problem, eval_times if eval_times is not None else [problem.t0, problem.t1])
    func = _Counted(problem.dynamics)
    if config.adaptive:
        trajectory = _odeint_fehlberg(func, problem, config, times)
    else:
        trajectory = _odeint_fixed(func, problem, config, times)
    trajectory.nfe = func.calls
    logging.debug(f'{config.method}: {trajectory.steps_taken} steps, {trajectory.nfe} evaluations')
    return trajectory
