import math

import pytest
import torch
import torch.nn as nn

from odeflow_dev.ode.adjoint import adjoint_backward, odeint_adjoint
from odeflow_dev.ode.solvers import OdeProblem, SolverConfig, odeint


class Scale(nn.Module):
    def __init__(self, a: float):
        super().__init__()
        self.a = nn.Parameter(torch.tensor(a, dtype=torch.float64))
        self.unused = nn.Parameter(torch.zeros(2, dtype=torch.float64))

    def forward(self, t, y):
        return self.a * y


class Linear(nn.Module):
    def __init__(self, dim: int, seed: int = 0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.matrix = nn.Parameter(0.3 * torch.randn(dim, dim, generator=generator, dtype=torch.float64))
        self.bias = nn.Parameter(0.1 * torch.randn(dim, generator=generator, dtype=torch.float64))

    def forward(self, t, y):
        return torch.tanh(self.matrix @ y + self.bias)


@pytest.mark.parametrize('method', ['rk4', 'fehlberg'])
def test_scalar_growth_gradients(method):
    a, y0_value, t1 = 0.7, 1.3, 1.5
    dynamics = Scale(a)
    y0 = torch.tensor([y0_value], dtype=torch.float64, requires_grad=True)
    config = SolverConfig(method=method, step_size=0.01, rtol=1e-9, atol=1e-9)
    trajectory = odeint_adjoint(OdeProblem(dynamics, y0, 0.0, t1), config)
    trajectory.final.sum().backward()
    assert float(trajectory.final) == pytest.approx(y0_value * math.exp(a * t1), rel=1e-7)
    assert float(y0.grad) == pytest.approx(math.exp(a * t1), rel=1e-6)
    assert float(dynamics.a.grad) == pytest.approx(t1 * y0_value * math.exp(a * t1), rel=1e-6)
    assert torch.equal(dynamics.unused.grad, torch.zeros(2, dtype=torch.float64))
    assert trajectory.steps_taken > 0
    assert trajectory.nfe > 0


def test_linear_system_matches_direct_and_finite_differences():
    dynamics = Linear(8)
    h0 = torch.linspace(-1, 1, 8, dtype=torch.float64)
    weights = torch.linspace(0.5, 2.0, 8, dtype=torch.float64)
    config = SolverConfig(method='rk4', step_size=0.01)

    y0 = h0.clone().requires_grad_(True)
    (odeint_adjoint(OdeProblem(dynamics, y0), config).final * weights).sum().backward()
    adjoint_grads = {name: p.grad.clone() for name, p in dynamics.named_parameters()}
    adjoint_h0 = y0.grad.clone()
    dynamics.zero_grad()

    y0 = h0.clone().requires_grad_(True)
    (odeint(OdeProblem(dynamics, y0), config).final * weights).sum().backward()
    for name, p in dynamics.named_parameters():
        assert torch.allclose(adjoint_grads[name], p.grad, atol=1e-6), name
    assert torch.allclose(adjoint_h0, y0.grad, atol=1e-6)

    def loss(matrix):
        with torch.no_grad():
            saved = dynamics.matrix.clone()
            dynamics.matrix.copy_(matrix)
            value = float((odeint(OdeProblem(dynamics, h0), config).final * weights).sum())
            dynamics.matrix.copy_(saved)
        return value

    eps = 1e-6
    base = dynamics.matrix.detach().clone()
    for i, j in [(0, 0), (3, 5), (7, 2)]:
        delta = torch.zeros_like(base)
        delta[i, j] = eps
        fd = (loss(base + delta) - loss(base - delta)) / (2 * eps)
        assert float(adjoint_grads['matrix'][i, j]) == pytest.approx(fd, abs=1e-6)


def test_eval_times_chain_segments():
    dynamics = Scale(0.5)
    y0 = torch.tensor([1.0], dtype=torch.float64, requires_grad=True)
    config = SolverConfig(method='rk4', step_size=0.01)
    trajectory = odeint_adjoint(OdeProblem(dynamics, y0, 0.0, 2.0), config, [0.0, 1.0, 2.0])
    assert len(trajectory.states) == 3
    (trajectory.states[1] + trajectory.states[2]).sum().backward()
    expected = math.exp(0.5) + math.exp(1.0)
    assert float(y0.grad) == pytest.approx(expected, rel=1e-8)


def test_adjoint_backward_returns_named_grads():
    dynamics = Linear(3, seed=4)
    h0 = torch.ones(3, dtype=torch.float64)
    config = SolverConfig(method='fehlberg', rtol=1e-8, atol=1e-8)
    problem = OdeProblem(dynamics, h0)
    h1 = odeint(problem, config).final
    grad_h0, grads = adjoint_backward(problem, config, h1, torch.ones(3, dtype=torch.float64))
    assert grad_h0.shape == h0.shape
    assert list(grads) == ['matrix', 'bias']
    assert grads['matrix'].shape == (3, 3)
