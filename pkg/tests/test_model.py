import pytest
import torch

from odeflow_dev.models.config import ModelConfig
from odeflow_dev.models.flownet import GRADIENT_MODES, FlowEstimator, upsample_flow
from odeflow_dev.modules.layers import ConvGRUCell, MixingNetwork
from odeflow_dev.modules.rhs import GruOdeRHS
from odeflow_dev.ode.solvers import SolverConfig
from odeflow_dev.utils.errors import ConfigError, ShapeMismatch

from .test_functional import naive_conv2d


def build(config, seed=0):
    torch.manual_seed(seed)
    return FlowEstimator(config)


@pytest.mark.parametrize('refiner,count', [('none', 1), ('gru', 3), ('ode', 1)])
def test_output_shapes(tiny_config, image_pair, refiner, count):
    net = build(tiny_config(gru_iterations=3))
    prediction = net(*image_pair, refiner=refiner)
    assert prediction.flow.shape == (2, 2, 16, 16)
    assert prediction.latent_flow.shape == (2, 2, 4, 4)
    assert len(prediction.predictions) == count
    assert prediction.predictions[-1] is prediction.flow


def test_solver_steps_reported(tiny_config, image_pair):
    net = build(tiny_config())
    with torch.no_grad():
        assert net(*image_pair, refiner='none').steps_taken == 0
        prediction = net(*image_pair, refiner='ode')
    assert prediction.steps_taken == 4
    assert prediction.nfe == 8


def test_zero_init_decoder_keeps_initial_flow(tiny_config, image_pair):
    net = build(tiny_config(decoder_zero_init=True))
    with torch.no_grad():
        prediction = net(*image_pair, refiner='ode')
    assert torch.equal(prediction.flow, prediction.flow_init)


@pytest.mark.parametrize('seed', range(100))
def test_gru_ode_single_euler_step_is_a_gru_update(tiny_config, image_pair, seed):
    solver = SolverConfig(method='euler', step_size=1.0)
    net = build(tiny_config(rhs_kind='gru_ode', decoder_zero_init=False, solver=solver), seed=seed)
    with torch.no_grad():
        ctx = net.prepare(*image_pair)
        ode_flow, trajectory = net.ode_refine(ctx, ctx.flow_init)
        gru_flow = net.gru_refine(ctx, ctx.flow_init, iterations=1)[0]
    assert trajectory.steps_taken == 1
    assert torch.allclose(ode_flow, gru_flow, atol=1e-6)


def test_decode_at_zero_is_the_mixed_latent(tiny_config, image_pair):
    net = build(tiny_config(decoder_zero_init=False))
    with torch.no_grad():
        ctx = net.prepare(*image_pair)
        flows, trajectories = net.decode_at(ctx, [0.0, 1.0])
        h0 = net.mix(ctx, ctx.flow_init)
        ode_flow, _ = net.ode_refine(ctx, ctx.flow_init)
    assert torch.equal(flows[0], ctx.flow_init + net.decoder(h0))
    assert torch.allclose(flows[1], ode_flow)
    assert trajectories[0].steps_taken == 0


def test_direct_and_adjoint_gradients_agree(tiny_config):
    solver = SolverConfig(method='rk4', step_size=0.02)
    net = build(tiny_config(decoder_zero_init=False, solver=solver)).double()
    generator = torch.Generator().manual_seed(5)
    image1 = torch.rand(1, 3, 16, 16, generator=generator, dtype=torch.float64)
    image2 = torch.rand(1, 3, 16, 16, generator=generator, dtype=torch.float64)

    def grads(mode):
        net.zero_grad()
        prediction = net(image1, image2, refiner='ode', gradient_mode=mode)
        prediction.flow.pow(2).mean().backward()
        return {name: p.grad.clone() for name, p in net.named_parameters() if p.grad is not None}

    direct = grads('direct')
    adjoint = grads('adjoint')
    assert set(direct) == set(adjoint)
    assert any(name.startswith('rhs.') for name in direct)
    for name in direct:
        scale = max(float(direct[name].abs().max()), 1e-8)
        assert float((direct[name] - adjoint[name]).abs().max()) <= 1e-4 * scale, name


def test_upsample_flow_scales_displacements():
    flow = torch.ones(1, 2, 3, 3)
    up = upsample_flow(flow, 4)
    assert up.shape == (1, 2, 12, 12)
    assert torch.allclose(up, torch.full_like(up, 4.0))


def test_shape_errors(tiny_config):
    net = build(tiny_config())
    with pytest.raises(ShapeMismatch):
        net(torch.rand(1, 3, 18, 16), torch.rand(1, 3, 18, 16))
    with pytest.raises(ShapeMismatch):
        net(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 20))
    with pytest.raises(ConfigError):
        net(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16), refiner='raft')


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(downsample=6)
    with pytest.raises(ConfigError):
        ModelConfig(d_inp=16, d_hid=32, d_out=32)
    with pytest.raises(ConfigError):
        ModelConfig(rhs_kind='lstm')
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({'d_hid': 32, 'heads': 4})
    config = ModelConfig.from_dict(ModelConfig(solver=SolverConfig(method='rk4')).to_dict())
    assert config.solver.method == 'rk4'
    assert config.corr_channels == 4 * 49


def test_encoder_is_shared_between_frames(tiny_config, image_pair):
    net = build(tiny_config())
    image = image_pair[0][:1]
    with torch.no_grad():
        assert torch.equal(net.encode_features(image), net.encode_features(image.clone()))
        corr = net.prepare(image, image.clone()).corr.reshape(1, 16, 16)
    assert torch.allclose(corr, corr.transpose(1, 2), atol=1e-6)


def test_encoder_downsamples_by_n(tiny_config):
    net = build(tiny_config(downsample=8))
    with torch.no_grad():
        features = net.encode_features(torch.rand(1, 3, 64, 64))
    assert features.shape == (1, 8, 8, 8)


def test_encoder_output_is_not_constant(tiny_config):
    net = build(tiny_config())
    generator = torch.Generator().manual_seed(9)
    with torch.no_grad():
        for _ in range(20):
            features = net.encode_features(torch.rand(1, 3, 16, 16, generator=generator))
            assert torch.isfinite(features).all()
            assert float(features.std()) > 0


def mixing_inputs(seed, d=4, corr_channels=9, size=5):
    generator = torch.Generator().manual_seed(seed)
    q = torch.randn(1, d, size, size, generator=generator, dtype=torch.float64)
    flow = torch.randn(1, 2, size, size, generator=generator, dtype=torch.float64)
    corr = torch.randn(1, corr_channels, size, size, generator=generator, dtype=torch.float64)
    return q, flow, corr


def test_single_conv_mixing_can_pass_the_context_through():
    mixing = MixingNetwork(4, 4, 9, depth=1, ks=5).double()
    with torch.no_grad():
        mixing.layers[0].zero_init()
        for c in range(4):
            mixing.layers[0].conv.weight[c, c, 2, 2] = 1.0
        q, flow, corr = mixing_inputs(0)
        assert torch.allclose(mixing(q, flow, corr), q, atol=1e-12)


def test_zero_mixing_weights_give_the_bias():
    mixing = MixingNetwork(4, 4, 9, depth=2, ks=3).double()
    bias = torch.arange(4, dtype=torch.float64) - 1.5
    with torch.no_grad():
        for layer in mixing.layers:
            layer.zero_init()
        mixing.layers[-1].conv.bias.copy_(bias)
        out = mixing(*mixing_inputs(1))
    assert torch.equal(out, bias.view(1, 4, 1, 1).expand_as(out))


def test_two_layer_mixing_matches_direct_sums():
    torch.manual_seed(2)
    mixing = MixingNetwork(2, 2, 3, depth=2, ks=3).double()
    q, flow, corr = mixing_inputs(2, d=2, corr_channels=3, size=4)
    with torch.no_grad():
        x = mixing.concat(q, flow, corr)
        first, second = (layer.conv for layer in mixing.layers)
        expected = naive_conv2d(torch.relu(naive_conv2d(x, first.weight, first.bias, 1, 1)),
                                second.weight, second.bias, 1, 1)
        assert torch.allclose(mixing(q, flow, corr), expected, atol=1e-10)


@pytest.fixture
def gru_cell():
    torch.manual_seed(4)
    return ConvGRUCell(3, 3).double()


def gru_state(seed):
    generator = torch.Generator().manual_seed(seed)
    h = torch.randn(1, 3, 5, 5, generator=generator, dtype=torch.float64)
    x = torch.randn(1, 3, 5, 5, generator=generator, dtype=torch.float64)
    return h, x


def test_gru_ode_is_still_when_the_gate_keeps_everything(gru_cell):
    with torch.no_grad():
        gru_cell.convz.zero_init()
        gru_cell.convz.conv.bias.fill_(1e3)
        h, x = gru_state(5)
        out = GruOdeRHS(gru_cell, x)(torch.tensor(0.0), h)
    assert torch.all(out == 0)


def test_gru_ode_is_still_at_the_candidate(gru_cell):
    with torch.no_grad():
        gru_cell.convq.zero_init()
        gru_cell.convq.conv.bias.copy_(torch.tensor([0.3, -0.2, 0.8]))
        h, x = gru_state(6)
        # with zero candidate weights q no longer depends on h
        _, candidate = gru_cell.gates(h, x)
        out = GruOdeRHS(gru_cell, x)(torch.tensor(0.0), candidate)
    assert torch.all(out == 0)


def test_rhs_zero_init_flag_reaches_the_block(tiny_config):
    net = build(tiny_config(rhs_zero_init=True))
    assert not net.rhs.block.attn.out_proj.weight.any()
    assert not net.rhs.block.mlp[-1].weight.any()
    assert build(tiny_config()).rhs.block.attn.out_proj.weight.any()


def test_gradients_match_finite_differences(tiny_config):
    solver = SolverConfig(method='rk4', step_size=0.05)
    net = build(tiny_config(decoder_zero_init=False, solver=solver)).double()
    generator = torch.Generator().manual_seed(6)
    image1 = torch.rand(1, 3, 16, 16, generator=generator, dtype=torch.float64)
    image2 = torch.rand(1, 3, 16, 16, generator=generator, dtype=torch.float64)
    params = dict(net.named_parameters())
    names = ['fnet.stem.conv.weight', 'mixing.layers.0.conv.weight', 'rhs.time_proj.weight',
             'rhs.block.attn.in_proj_weight', 'decoder.conv2.conv.weight']

    def loss(mode='direct'):
        return net(image1, image2, refiner='ode', gradient_mode=mode).flow.pow(2).mean()

    analytic = {}
    for mode in GRADIENT_MODES:
        net.zero_grad()
        loss(mode).backward()
        analytic[mode] = {name: params[name].grad.reshape(-1).clone() for name in names}

    eps = 1e-6
    with torch.no_grad():
        for name in names:
            flat = params[name].view(-1)
            for index in torch.randint(flat.numel(), (3,), generator=generator).tolist():
                original = float(flat[index])
                flat[index] = original + eps
                up = float(loss())
                flat[index] = original - eps
                down = float(loss())
                flat[index] = original
                numeric = (up - down) / (2 * eps)
                for mode in GRADIENT_MODES:
                    grad = float(analytic[mode][name][index])
                    assert abs(numeric - grad) <= 1e-3 * abs(grad) + 1e-7, (name, index, mode, numeric, grad)
