import json
import re
from pathlib import Path

import pytest
import torch
from omegaconf import OmegaConf

from odeflow_dev.cli import main, model_overrides
from odeflow_dev.models.config import ModelConfig
from odeflow_dev.models.flownet import FlowEstimator
from odeflow_dev.utils.checkpoint import load_checkpoint
from odeflow_dev.utils.codecs import read_flo, read_ppm, write_ppm
from odeflow_dev.utils.config import compose_config, flatten_config, read_config_file
from odeflow_dev.utils.errors import ConfigError

from .conftest import TINY_MODEL


def sets(overrides):
    return [arg for override in overrides for arg in ('--set', override)]


def last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


def test_solve_prints_trajectory(tmp_path, capsys):
    assert main(['solve', '--problem', 'exp_growth', '--method', 'rk4', '--out', str(tmp_path)]) == 0
    result = last_json(capsys)
    assert result['times'] == [0.0, 1.0]
    assert result['steps_taken'] == 4
    assert result['final_error'] < 1e-3
    assert json.loads((tmp_path / 'trajectory.json').read_text())['method'] == 'rk4'
    assert (tmp_path / 'config.txt').is_file()
    assert (tmp_path / 'config.yaml').is_file()


def test_solve_adaptive_with_eval_times(tmp_path, capsys):
    argv = ['solve', '--problem', 'rotation', '--method', 'fehlberg', '--rtol', '1e-8', '--atol', '1e-8',
            '--times', '0', '1', '2', '--out', str(tmp_path)]
    assert main(argv) == 0
    result = last_json(capsys)
    assert len(result['states']) == 3
    assert max(result['errors']) < 1e-5


def test_config_file_then_set(tmp_path, capsys):
    config = tmp_path / 'run.txt'
    config.write_text('# solver choice\nsolver=euler\n\nsolver.step_size=0.5\n')
    assert main(['solve', '--config', str(config), '--out', str(tmp_path / 'a')]) == 0
    assert last_json(capsys)['steps_taken'] == 2
    assert main(['solve', '--config', str(config), '--set', 'solver.step_size=0.25', '--out', str(tmp_path / 'b')]) == 0
    assert last_json(capsys)['steps_taken'] == 4


@pytest.mark.parametrize('argv', [
    ['solve', '--set', 'solver.bogus=1'],
    ['solve', '--set', 'solver.method=bogus'],
    ['solve', '--config', 'does/not/exist.txt'],
    ['solve', '--method', 'euler', '--step-size', '0.001', '--max-steps', '10'],
    ['train', '--set', 'dataset.max_disp=100.0', '--iterations', '0'],
])
def test_errors_exit_one(tmp_path, argv):
    assert main(argv + ['--out', str(tmp_path)]) == 1


def test_read_config_file_rejects_bare_lines(tmp_path):
    path = tmp_path / 'bad.txt'
    path.write_text('solver.rtol\n')
    with pytest.raises(ConfigError):
        read_config_file(path)


def test_echo_round_trip(tiny_overrides):
    cfg = compose_config(tiny_overrides + ['solver=fehlberg', 'eval.times=[0.0,2.0]'])
    rebuilt = compose_config(flatten_config(cfg))
    assert OmegaConf.to_container(rebuilt) == OmegaConf.to_container(cfg)


def test_echoed_file_reproduces_the_run(tmp_path, tiny_overrides):
    assert main(['solve', '--method', 'midpoint', '--seed', '7', '--out', str(tmp_path / 'a')] + sets(tiny_overrides)) == 0
    assert main(['solve', '--config', str(tmp_path / 'a' / 'config.txt'), '--out', str(tmp_path / 'b')]) == 0
    assert (tmp_path / 'a' / 'config.txt').read_text() == (tmp_path / 'b' / 'config.txt').read_text()
    assert 'seed=7' in (tmp_path / 'b' / 'config.txt').read_text().splitlines()


def test_model_overrides_only_collects_model_keys():
    cfg = compose_config(['model.d_hid=8', 'model.d_inp=8', 'model.d_out=8', 'solver.rtol=0.1'])
    keys = model_overrides(['model.d_hid=8', 'solver.rtol=0.1', 'model.target._target_=x'], cfg)
    assert keys == {'d_hid': 8}


@pytest.fixture
def run_dir(tmp_path, tiny_overrides):
    out = tmp_path / 'run'
    assert main(['train', '--iterations', '0', '--out', str(out)] + sets(tiny_overrides)) == 0
    return out


def test_train_zero_iterations_writes_the_initial_model(run_dir):
    assert (run_dir / 'metrics.jsonl').read_text() == ''
    config, tensors = load_checkpoint(run_dir / 'checkpoints' / 'final.ckpt')
    assert config['iteration'] == 0
    assert config['refiner'] == 'ode'
    cfg = OmegaConf.load(run_dir / 'config.yaml')
    torch.manual_seed(cfg.seed)
    expected = FlowEstimator(ModelConfig(**TINY_MODEL)).state_dict()
    assert list(tensors) == list(expected)
    for name, tensor in expected.items():
        assert torch.equal(tensors[name], tensor), name
    report = json.loads((run_dir / 'eval_report.json').read_text())
    assert report['num_samples'] == 4
    assert report['refiner'] == 'ode'


def test_eval_refiners(tmp_path, run_dir, tiny_overrides, capsys):
    epes = {}
    for refiner in ('none', 'gru', 'ode'):
        out = tmp_path / f'eval_{refiner}'
        argv = ['eval', '--checkpoint', str(run_dir), '--refiner', refiner, '--out', str(out)]
        assert main(argv + sets(tiny_overrides)) == 0
        report = json.loads((out / 'eval_report.json').read_text())
        assert report['refiner'] == refiner
        assert len(report['samples']) == report['num_samples'] == 4
        epes[refiner] = report['epe']
    # zero-initialised decoder: the ode refiner returns the initial estimate unchanged
    assert epes['ode'] == pytest.approx(epes['none'])
    capsys.readouterr()


def test_eval_rejects_mismatched_model(tmp_path, run_dir, tiny_overrides):
    argv = ['eval', '--checkpoint', str(run_dir), '--out', str(tmp_path / 'e')]
    overrides = tiny_overrides + ['model.d_hid=16', 'model.d_inp=16', 'model.d_out=16']
    assert main(argv + sets(overrides)) == 1


def test_eval_with_swapped_solver(tmp_path, run_dir, tiny_overrides):
    out = tmp_path / 'eval_rk4'
    argv = ['eval', '--checkpoint', str(run_dir / 'checkpoints' / 'final.ckpt'), '--out', str(out)]
    assert main(argv + sets(tiny_overrides + ['solver=rk4', 'solver.step_size=0.5'])) == 0
    report = json.loads((out / 'eval_report.json').read_text())
    assert report['solver']['method'] == 'rk4'
    assert report['solver']['steps']['mean'] == 2


def test_gen_data_infer_and_manifest_eval(tmp_path, run_dir, tiny_overrides):
    data = tmp_path / 'data'
    assert main(['gen-data', '--split', 'test', '--num', '2', '--out', str(data)] + sets(tiny_overrides)) == 0
    assert len(json.loads((data / 'manifest.json').read_text())) == 2

    out = tmp_path / 'infer'
    argv = ['infer', '--checkpoint', str(run_dir), str(data / '000000_img1.ppm'), str(data / '000000_img2.ppm'),
            '--out', str(out)]
    assert main(argv + sets(tiny_overrides)) == 0
    assert read_flo(out / 'flow.flo').shape == (2, 32, 32)
    assert read_ppm(out / 'flow.ppm').shape == (3, 32, 32)

    out = tmp_path / 'eval_manifest'
    argv = ['eval', '--checkpoint', str(run_dir), '--manifest', str(data / 'manifest.json'), '--out', str(out)]
    assert main(argv + sets(tiny_overrides)) == 0
    assert json.loads((out / 'eval_report.json').read_text())['num_samples'] == 2


def test_infer_rejects_mismatched_extents(tmp_path, run_dir, tiny_overrides):
    write_ppm(torch.zeros(3, 32, 32), tmp_path / 'a.ppm')
    write_ppm(torch.zeros(3, 16, 32), tmp_path / 'b.ppm')
    argv = ['infer', '--checkpoint', str(run_dir), str(tmp_path / 'a.ppm'), str(tmp_path / 'b.ppm'),
            '--out', str(tmp_path / 'infer')]
    assert main(argv + sets(tiny_overrides)) == 1


def test_ablate_time(tmp_path, run_dir, tiny_overrides):
    out = tmp_path / 'ablate'
    argv = ['ablate-t', '--checkpoint', str(run_dir), '--times', '0', '0.5', '1', '2', '--out', str(out)]
    assert main(argv + sets(tiny_overrides)) == 0
    rows = json.loads((out / 'ablate_t.json').read_text())
    assert [row['t'] for row in rows] == [0.0, 0.5, 1.0, 2.0]
    assert rows[0]['solver_steps_mean'] == 0
    assert (out / 'ablate_t.csv').read_text().splitlines()[0] == 't,epe,fl_all,solver_steps_mean'
    assert read_ppm(out / 'strip.ppm').shape == (3, 32, 5 * 32 + 4 * 2)
    assert (out / 'epe_vs_time.png').is_file()
    assert main(['ablate-t', '--checkpoint', str(run_dir), '--times', '1', '0', '--out', str(out)]) == 1


def test_eval_is_reproducible_from_its_echoed_config(tmp_path, run_dir, tiny_overrides):
    reports = []
    for name in ('a', 'b'):
        out = tmp_path / f'eval_{name}'
        assert main(['eval', '--checkpoint', str(run_dir), '--out', str(out)] + sets(tiny_overrides)) == 0
        reports.append((out / 'eval_report.json').read_text())
    assert reports[0] == reports[1]
    out = tmp_path / 'eval_rerun'
    argv = ['eval', '--checkpoint', str(run_dir), '--config', str(tmp_path / 'eval_a' / 'config.txt'), '--out', str(out)]
    assert main(argv) == 0
    assert (out / 'eval_report.json').read_text() == reports[0]


def test_infer_is_byte_identical_across_runs(tmp_path, run_dir, tiny_overrides):
    data = tmp_path / 'data'
    assert main(['gen-data', '--split', 'test', '--num', '1', '--out', str(data)] + sets(tiny_overrides)) == 0
    outputs = []
    for name in ('a', 'b'):
        out = tmp_path / f'infer_{name}'
        argv = ['infer', '--checkpoint', str(run_dir), str(data / '000000_img1.ppm'), str(data / '000000_img2.ppm'),
                '--out', str(out)]
        assert main(argv + sets(tiny_overrides)) == 0
        outputs.append(((out / 'flow.flo').read_bytes(), (out / 'flow.ppm').read_bytes()))
    assert outputs[0] == outputs[1]


def test_every_requirement_is_imported():
    root = Path(__file__).resolve().parents[1]
    sources = '\n'.join(path.read_text() for folder in ('odeflow_dev', 'tests') for path in (root / folder).rglob('*.py'))
    import_names = {'pytorch-lightning': 'pytorch_lightning', 'hydra-core': 'hydra'}
    for line in (root / 'requirements.txt').read_text().split():
        name = line.split('==')[0]
        module = import_names.get(name, name.lower())
        assert re.search(rf'^\s*(import|from) {module}\b', sources, re.MULTILINE), name
